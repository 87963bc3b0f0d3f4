#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cgiqa/attributes.hpp"
#include "cgiqa/csv.hpp"
#include "cgiqa/image.hpp"
#include "cgiqa/parallel.hpp"
#include "cgiqa/rng.hpp"
#include "cgiqa/subjective.hpp"
#include "cgiqa/train.hpp"
#include "cli.hpp"

namespace cgiqa::cli {

namespace {

struct ImageEntry {
  std::string id;
  fs::path path;
};

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm";
}

// A directory of images (sorted by file name) or a dataset manifest.
std::vector<ImageEntry> list_images(const fs::path& source) {
  std::vector<ImageEntry> out;
  if (fs::is_directory(source)) {
    for (const auto& e : fs::directory_iterator(source)) {
      if (e.is_regular_file() && is_image(e.path())) {
        out.push_back({e.path().filename().string(), e.path()});
      }
    }
    std::sort(out.begin(), out.end(),
              [](const ImageEntry& a, const ImageEntry& b) { return a.id < b.id; });
  } else if (fs::exists(source)) {
    for (const auto& item : load_manifest(source).items) out.push_back({item.id, item.image});
  } else {
    throw IoError("no such file or directory: " + source.string());
  }
  if (out.empty()) throw ValidationError("no images found in " + source.string());
  return out;
}

struct AttributeRows {
  std::vector<std::string> ids;
  std::vector<std::string> paths;
  std::vector<AttributeVector> values;
};

std::string attribute_csv(const AttributeRows& rows, const std::vector<std::size_t>& which) {
  std::ostringstream out;
  out << "id,path";
  for (const char* name : AttributeVector::kNames) out << ',' << name;
  out << '\n';
  for (std::size_t i : which) {
    out << csv::escape(rows.ids[i]) << ',' << csv::escape(rows.paths[i]);
    for (double v : rows.values[i].values()) out << ',' << csv::format_double(v);
    out << '\n';
  }
  return out.str();
}

AttributeRows read_attribute_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  const csv::Table t = csv::read(in, path.string());
  const std::size_t id_col = t.require("id", path.string());
  const long path_col = t.column("path");
  std::array<std::size_t, AttributeVector::kCount> cols{};
  for (std::size_t k = 0; k < cols.size(); ++k) {
    cols[k] = t.require(AttributeVector::kNames[k], path.string());
  }
  AttributeRows rows;
  for (const auto& r : t.rows) {
    rows.ids.push_back(r[id_col]);
    rows.paths.push_back(path_col >= 0 ? r[static_cast<std::size_t>(path_col)] : "");
    std::array<double, AttributeVector::kCount> v{};
    for (std::size_t k = 0; k < cols.size(); ++k) v[k] = csv::parse_double(r[cols[k]], path.string());
    rows.values.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  if (rows.ids.empty()) throw ValidationError(path.string() + ": no rows");
  return rows;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

struct AttributesArgs {
  std::string images;
};

void run_attributes(Context& ctx, const AttributesArgs& a, const CLI::App& sub) {
  const json s = ctx.section("attributes", {"images"});
  const fs::path source = setting<std::string>(sub.get_option("--images"), a.images, s, "images", "");
  if (source.empty()) throw UsageError("--images is required");
  const fs::path out = ctx.out(s);
  RunManifest m = ctx.manifest("attributes", s);
  const auto entries = list_images(source);
  AttributeRows rows;
  rows.values.resize(entries.size());
  for (const auto& e : entries) {
    rows.ids.push_back(e.id);
    rows.paths.push_back(e.path.string());
  }
  parallel_for(entries.size(), m.threads, [&](std::size_t i) {
    rows.values[i] = compute_attributes(load_image(entries[i].path));
  });
  log("attributes", std::to_string(entries.size()) + " images");
  write_text(out, attribute_csv(rows, iota_n(rows.ids.size())));

  m.config = {{"images", source.string()}, {"out", out.string()}};
  for (const auto& e : entries) m.add_input(e.path);
  m.add_output(out);
  m.summary = {{"images", entries.size()}};
  ctx.finish(m, out);
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string attributes;
  std::size_t k = 0;
  std::size_t bins = 10;
  std::size_t trials = 8;
  std::size_t swaps = 40;
  std::size_t baseline = 100;
};

void run_sample(Context& ctx, const SampleArgs& a, const CLI::App& sub) {
  const json s = ctx.section("sample", {"attributes", "k", "bins", "trials", "swaps_per_item",
                                        "baseline_subsets"});
  const fs::path in = setting<std::string>(sub.get_option("--attributes"), a.attributes, s,
                                           "attributes", "");
  if (in.empty()) throw UsageError("--attributes is required");
  const fs::path out = ctx.out(s);
  RunManifest m = ctx.manifest("sample", s);
  SampleOptions opt;
  const auto k = setting<std::size_t>(sub.get_option("--k"), a.k, s, "k", 0);
  opt.bins = setting<std::size_t>(sub.get_option("--bins"), a.bins, s, "bins", 10);
  opt.trials = setting<std::size_t>(sub.get_option("--trials"), a.trials, s, "trials", 8);
  opt.swaps_per_item =
      setting<std::size_t>(sub.get_option("--swaps"), a.swaps, s, "swaps_per_item", 40);
  const auto baseline =
      setting<std::size_t>(sub.get_option("--baseline"), a.baseline, s, "baseline_subsets", 100);
  opt.seed = m.seed;
  opt.threads = m.threads;

  const AttributeRows rows = read_attribute_csv(in);
  if (k == 0 || k > rows.ids.size()) {
    throw ValidationError("k must lie in [1, " + std::to_string(rows.ids.size()) + "]");
  }
  const SampleResult r = match_sample(rows.values, k, opt);
  write_text(out, attribute_csv(rows, r.indices));

  json summary{{"pool", rows.ids.size()}, {"k", k}, {"distance", r.distance}};
  if (baseline > 0) {
    Rng rng(derive_seed(m.seed, 0xba5e));
    auto order = iota_n(rows.ids.size());
    std::vector<double> dists;
    for (std::size_t t = 0; t < baseline; ++t) {
      std::shuffle(order.begin(), order.end(), rng);
      dists.push_back(subset_distance(rows.values, {order.begin(), order.begin() + k}, opt.bins));
    }
    summary["random_median"] = median(dists);
  }
  log("sample", "distance " + csv::format_double(r.distance));

  m.config = {{"attributes", in.string()}, {"out", out.string()}, {"k", k},
              {"bins", opt.bins},          {"trials", opt.trials},
              {"swaps_per_item", opt.swaps_per_item}, {"baseline_subsets", baseline}};
  m.add_input(in);
  m.add_output(out);
  m.summary = summary;
  ctx.finish(m, out);
}

// ---------------------------------------------------------------------------

struct MosArgs {
  std::string ratings;
  std::string report;
  double z_low = -3.0;
  double z_high = 3.0;
};

void run_mos(Context& ctx, const MosArgs& a, const CLI::App& sub) {
  const json s = ctx.section("mos", {"ratings", "report", "z_low", "z_high"});
  const fs::path in = setting<std::string>(sub.get_option("--ratings"), a.ratings, s, "ratings", "");
  if (in.empty()) throw UsageError("--ratings is required");
  const fs::path out = ctx.out(s);
  const fs::path report = setting<std::string>(sub.get_option("--report"), a.report, s, "report", "");
  RunManifest m = ctx.manifest("mos", s);
  RescaleConfig rescale;
  rescale.z_low = setting<double>(sub.get_option("--z-low"), a.z_low, s, "z_low", -3.0);
  rescale.z_high = setting<double>(sub.get_option("--z-high"), a.z_high, s, "z_high", 3.0);
  rescale.validate();

  const RatingMatrix ratings = RatingMatrix::from_records(read_ratings_csv(in));
  const MosResult result = compute_mos(ratings, rescale);
  std::ostringstream table;
  write_mos_csv(table, result.table);
  write_text(out, table.str());
  if (!report.empty()) write_text(report, mos_to_json(result, ratings).dump(2) + "\n");

  json rejected = json::array();
  for (std::size_t i : result.report.rejected) rejected.push_back(ratings.subjects()[i]);
  log("mos", std::to_string(result.table.rows.size()) + " stimuli, " +
                 std::to_string(rejected.size()) + " subjects rejected");

  m.config = {{"ratings", in.string()}, {"out", out.string()}, {"report", report.string()},
              {"z_low", rescale.z_low}, {"z_high", rescale.z_high}};
  m.add_input(in);
  m.add_output(out);
  if (!report.empty()) m.add_output(report);
  m.summary = {{"subjects", ratings.subject_count()},
               {"stimuli", result.table.rows.size()},
               {"rejected", rejected},
               {"without_ratings", result.table.without_ratings}};
  ctx.finish(m, out);
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string attributes;
  std::string subset;
  std::string mos;
  std::string csv;
  std::size_t bins = 10;
};

void run_plotdata(Context& ctx, const PlotArgs& a, const CLI::App& sub) {
  const json s = ctx.section("plotdata", {"attributes", "subset", "mos", "csv", "bins"});
  const fs::path attrs =
      setting<std::string>(sub.get_option("--attributes"), a.attributes, s, "attributes", "");
  const fs::path subset = setting<std::string>(sub.get_option("--subset"), a.subset, s, "subset", "");
  const fs::path mos_path = setting<std::string>(sub.get_option("--mos"), a.mos, s, "mos", "");
  const fs::path csv_out = setting<std::string>(sub.get_option("--csv"), a.csv, s, "csv", "");
  const auto bins = setting<std::size_t>(sub.get_option("--bins"), a.bins, s, "bins", 10);
  if (attrs.empty() && mos_path.empty()) throw UsageError("need --attributes and/or --mos");
  if (!subset.empty() && attrs.empty()) throw UsageError("--subset needs --attributes");
  if (bins == 0) throw ConfigError("bins must be positive");
  const fs::path out = ctx.out(s);
  RunManifest m = ctx.manifest("plotdata", s);

  json doc{{"bins", bins}};
  std::ostringstream long_csv;
  long_csv << "series,variable,bin,lower,upper,value\n";
  auto emit = [&](const std::string& series, const std::string& variable,
                  const std::vector<double>& edges, const std::vector<double>& values) {
    for (std::size_t b = 0; b < values.size(); ++b) {
      long_csv << series << ',' << variable << ',' << b << ',' << csv::format_double(edges[b])
               << ',' << csv::format_double(edges[b + 1]) << ',' << csv::format_double(values[b])
               << '\n';
    }
  };

  if (!attrs.empty()) {
    const AttributeRows pool = read_attribute_csv(attrs);
    m.add_input(attrs);
    const AttributeHistogramSet hist = attribute_histograms(pool.values, bins);
    std::optional<AttributeRows> picked;
    if (!subset.empty()) {
      picked = read_attribute_csv(subset);
      m.add_input(subset);
    }
    json list = json::array();
    for (std::size_t k = 0; k < AttributeVector::kCount; ++k) {
      const AttributeHistogram& h = hist.histograms[k];
      json entry{{"name", h.name}, {"edges", h.edges}, {"pool", h.mass}};
      emit("pool", h.name, h.edges, h.mass);
      if (picked) {
        // Subset mass on the pool's bin edges.
        std::vector<double> mass(bins, 0.0);
        for (const auto& v : picked->values) {
          mass[bin_index(v.values()[k], h.edges.front(), h.edges.back(), bins)] += 1.0;
        }
        for (double& x : mass) x /= static_cast<double>(picked->values.size());
        entry["subset"] = mass;
        emit("subset", h.name, h.edges, mass);
      }
      list.push_back(entry);
    }
    doc["attributes"] = list;
  }
  if (!mos_path.empty()) {
    const MosTable table = read_mos_csv(mos_path);
    m.add_input(mos_path);
    const MosDistribution d = mos_distribution(table, bins);
    doc["mos"] = {{"edges", d.edges}, {"counts", d.counts}, {"mean", d.mean}, {"std", d.std},
                  {"n", table.rows.size()}};
    emit("mos", "mos", d.edges, std::vector<double>(d.counts.begin(), d.counts.end()));
  }
  write_text(out, doc.dump(2) + "\n");
  m.add_output(out);
  if (!csv_out.empty()) {
    write_text(csv_out, long_csv.str());
    m.add_output(csv_out);
  }
  m.config = {{"attributes", attrs.string()}, {"subset", subset.string()},
              {"mos", mos_path.string()},     {"csv", csv_out.string()},
              {"bins", bins},                 {"out", out.string()}};
  ctx.finish(m, out);
}

}  // namespace

void add_attributes(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<AttributesArgs>();
  CLI::App* sub = app.add_subcommand("attributes", "Compute per-image quality attributes (CSV)");
  sub->add_option("--images", args->images, "image directory or dataset manifest");
  sub->callback([&ctx, args, sub] { run_attributes(ctx, *args, *sub); });
}

void add_sample(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<SampleArgs>();
  CLI::App* sub = app.add_subcommand("sample", "Pick a subset whose attribute histograms match the pool");
  sub->add_option("--attributes", args->attributes, "attribute CSV from `attributes`");
  sub->add_option("--k", args->k, "subset size");
  sub->add_option("--bins", args->bins, "histogram bins per attribute");
  sub->add_option("--trials", args->trials, "independent restarts");
  sub->add_option("--swaps", args->swaps, "swap proposals per pool item and trial");
  sub->add_option("--baseline", args->baseline, "random subsets for the baseline median (0: skip)");
  sub->callback([&ctx, args, sub] { run_sample(ctx, *args, *sub); });
}

void add_mos(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<MosArgs>();
  CLI::App* sub = app.add_subcommand("mos", "Z-score, screen and rescale raw ratings into MOS");
  sub->add_option("--ratings", args->ratings, "ratings CSV (subject_id,stimulus_id,rating,timestamp)");
  sub->add_option("--report", args->report, "optional JSON report with per-subject screening");
  sub->add_option("--z-low", args->z_low, "z-score mapped to 0");
  sub->add_option("--z-high", args->z_high, "z-score mapped to 5");
  sub->callback([&ctx, args, sub] { run_mos(ctx, *args, *sub); });
}

void add_plotdata(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<PlotArgs>();
  CLI::App* sub = app.add_subcommand("plotdata", "Emit attribute and MOS distribution data");
  sub->add_option("--attributes", args->attributes, "attribute CSV of the pool");
  sub->add_option("--subset", args->subset, "attribute CSV of a sampled subset");
  sub->add_option("--mos", args->mos, "MOS CSV");
  sub->add_option("--csv", args->csv, "optional long-format CSV copy");
  sub->add_option("--bins", args->bins, "histogram bins");
  sub->callback([&ctx, args, sub] { run_plotdata(ctx, *args, *sub); });
}

}  // namespace cgiqa::cli
