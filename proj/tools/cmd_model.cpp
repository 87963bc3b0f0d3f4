#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cgiqa/checkpoint.hpp"
#include "cgiqa/config.hpp"
#include "cgiqa/csv.hpp"
#include "cgiqa/metrics.hpp"
#include "cgiqa/subjective.hpp"
#include "cgiqa/train.hpp"
#include "cli.hpp"

namespace cgiqa::cli {

namespace {

json report_json(const EvalReport& r) {
  return {{"n", r.n},
          {"srcc", r.srcc},
          {"plcc", r.plcc},
          {"krcc", r.krcc},
          {"rmse", r.rmse},
          {"logistic_beta", r.logistic.beta},
          {"monotone_mapping", r.monotone_mapping}};
}

json criterion_json(const CriterionSummary& c) {
  // NaN has no JSON spelling.
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"mean", num(c.mean)}, {"std", num(c.std)}};
}

std::string split_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "split_%02zu.cgqw", k);
  return buf;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string mode = "quality";
  std::string aesthetic;
  std::string predictions;
  std::string preset;
  bool all_splits = false;
  std::size_t split_index = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t resize = 0;
  std::size_t crop = 0;
  double lr = 0.0;
};

void run_train(Context& ctx, const TrainArgs& a, const CLI::App& sub) {
  const json s = ctx.section(
      "train", {"manifest", "mode", "aesthetic_weights", "predictions", "all_splits", "split_index",
                "train_fraction", "repeats", "epochs", "batch_size", "resize", "crop",
                "learning_rate", "beta1", "beta2", "epsilon"});
  const fs::path manifest =
      setting<std::string>(sub.get_option("--manifest"), a.manifest, s, "manifest", "");
  if (manifest.empty()) throw UsageError("--manifest is required");
  const std::string mode = setting<std::string>(sub.get_option("--mode"), a.mode, s, "mode", "quality");
  if (mode != "quality" && mode != "aesthetic") throw UsageError("--mode must be quality or aesthetic");
  const fs::path aesthetic =
      setting<std::string>(sub.get_option("--aesthetic"), a.aesthetic, s, "aesthetic_weights", "");
  const fs::path predictions =
      setting<std::string>(sub.get_option("--predictions"), a.predictions, s, "predictions", "");
  const bool all_splits =
      setting<bool>(sub.get_option("--all-splits"), a.all_splits, s, "all_splits", false);
  const auto split_index =
      setting<std::size_t>(sub.get_option("--split-index"), a.split_index, s, "split_index", 0);
  const fs::path out = ctx.out(s);
  RunManifest m = ctx.manifest("train", s);

  json protocol_json = json::object();
  for (const auto& [key, value] : s.items()) {
    if (key != "manifest" && key != "mode" && key != "aesthetic_weights" && key != "predictions" &&
        key != "all_splits" && key != "split_index" && key != "out" && key != "threads") {
      protocol_json[key] = value;
    }
  }
  protocol_json.erase("seed");
  TrainProtocol protocol = train_protocol_from_json(protocol_json);
  if (sub.get_option("--epochs")->count()) protocol.epochs = a.epochs;
  if (sub.get_option("--batch-size")->count()) protocol.batch_size = a.batch_size;
  if (sub.get_option("--resize")->count()) protocol.resize = a.resize;
  if (sub.get_option("--crop")->count()) protocol.crop = a.crop;
  if (sub.get_option("--lr")->count()) protocol.adam.learning_rate = a.lr;
  protocol.seed = m.seed;
  protocol.validate();

  json model_json = config_section(ctx.doc, "model");
  if (sub.get_option("--preset")->count()) model_json["preset"] = a.preset;
  const ModelConfig cfg = model_config_from_json(model_json);
  const std::size_t input = mode == "quality" ? cfg.backbone.input_size
                                              : cfg.aesthetic_backbone.input_size;
  if (protocol.crop != input) {
    throw ConfigError("crop (" + std::to_string(protocol.crop) +
                      ") must equal the backbone input size (" + std::to_string(input) + ")");
  }

  const Dataset data = load_manifest(manifest);
  m.add_input(manifest);
  for (const auto& item : data.items) m.add_input(item.image);
  if (!aesthetic.empty()) m.add_input(aesthetic);
  const std::vector<double> mos = data.mos();
  const PreparedImages images = load_and_prepare(data, protocol.resize, m.threads);
  log("train", std::to_string(data.items.size()) + " images prepared at " +
                   std::to_string(protocol.resize) + "px");

  auto progress = [](std::size_t epoch, double loss) {
    log("train", "epoch " + std::to_string(epoch + 1) + " loss " + csv::format_double(loss));
  };

  m.config = {{"manifest", manifest.string()},
              {"mode", mode},
              {"aesthetic_weights", aesthetic.string()},
              {"predictions", predictions.string()},
              {"all_splits", all_splits},
              {"split_index", split_index},
              {"out", out.string()},
              {"protocol", to_json(protocol)},
              {"model", to_json(cfg)}};

  if (mode == "aesthetic") {
    AestheticRegressor reg(cfg.aesthetic_backbone, derive_seed(m.seed, 1));
    std::vector<std::size_t> all(data.items.size());
    std::iota(all.begin(), all.end(), 0);
    const TrainResult r = train_aesthetic(reg, images, mos, all, protocol, progress);
    prepare_output(out);
    reg.save_backbone(out);
    m.add_output(out);
    m.add_output(out.string() + ".json");
    m.summary = {{"epoch_loss", r.epoch_loss}, {"steps", r.steps}};
    ctx.finish(m, out);
    return;
  }

  if (aesthetic.empty()) log("train", "warning: no --aesthetic weights, aesthetic stream stays at its random init");
  const SplitProtocol sp{protocol.repeats, protocol.train_fraction, m.seed};
  const std::vector<Split> splits = make_splits(data.items.size(), data.groups(), sp);

  auto fresh_model = [&] {
    TwoStreamModel model(cfg, derive_seed(m.seed, 2));
    if (!aesthetic.empty()) model.load_aesthetic(aesthetic);
    return model;
  };
  auto prediction_rows = [&](std::ostringstream& csv_out, const std::string& prefix,
                             const Split& split, const std::vector<double>& pred) {
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const std::size_t item = split.test[i];
      csv_out << prefix << csv::escape(data.items[item].id) << ',' << csv::format_double(pred[i])
              << ',' << csv::format_double(mos[item]) << '\n';
    }
  };

  if (!all_splits) {
    if (split_index >= splits.size()) throw UsageError("--split-index out of range");
    const Split& split = splits[split_index];
    TwoStreamModel model = fresh_model();
    const TrainResult r = train_model(model, images, mos, split.train, protocol, progress);
    prepare_output(out);
    save_params(out, model.params());
    m.add_output(out);
    m.add_output(out.string() + ".json");
    const std::vector<double> pred = predict_items(model, images, split.test, protocol.crop);
    std::vector<double> truth;
    for (std::size_t i : split.test) truth.push_back(mos[i]);
    json test = nullptr;
    try {
      test = report_json(evaluate(pred, truth, {8, 500, m.seed}));
    } catch (const Error& e) {
      test = {{"error", e.what()}};
    }
    if (!predictions.empty()) {
      std::ostringstream csv_out;
      csv_out << "stimulus_id,prediction,mos\n";
      prediction_rows(csv_out, "", split, pred);
      write_text(predictions, csv_out.str());
      m.add_output(predictions);
    }
    m.summary = {{"split_index", split_index}, {"train_items", split.train.size()},
                 {"test_items", split.test.size()}, {"epoch_loss", r.epoch_loss},
                 {"steps", r.steps}, {"test", test}};
    ctx.finish(m, out);
    return;
  }

  fs::create_directories(out);
  std::ostringstream all_pred;
  all_pred << "split,stimulus_id,prediction,mos\n";
  json losses = json::array();
  const ProtocolReport report = repeated_protocol(splits, mos, [&](const Split& split, std::size_t k) {
    log("train", "split " + std::to_string(k + 1) + "/" + std::to_string(splits.size()));
    TwoStreamModel model = fresh_model();
    const TrainResult r = train_model(model, images, mos, split.train, protocol, progress);
    losses.push_back(r.epoch_loss);
    save_params(out / split_name(k), model.params());
    std::vector<double> pred = predict_items(model, images, split.test, protocol.crop);
    prediction_rows(all_pred, std::to_string(k) + ",", split, pred);
    return pred;
  });
  write_text(out / "predictions.csv", all_pred.str());

  json per_split = json::array();
  for (const SplitOutcome& o : report.splits) {
    per_split.push_back({{"index", o.index},
                         {"report", o.report ? report_json(*o.report) : json(nullptr)},
                         {"error", o.error},
                         {"epoch_loss", losses[o.index]}});
  }
  const json summary{{"splits", per_split},
                     {"srcc", criterion_json(report.srcc)},
                     {"plcc", criterion_json(report.plcc)},
                     {"krcc", criterion_json(report.krcc)},
                     {"rmse", criterion_json(report.rmse)},
                     {"degenerate", report.degenerate}};
  write_text(out / "report.json", summary.dump(2) + "\n");
  m.add_output(out);
  m.summary = {{"srcc", criterion_json(report.srcc)}, {"plcc", criterion_json(report.plcc)},
               {"krcc", criterion_json(report.krcc)}, {"rmse", criterion_json(report.rmse)},
               {"degenerate", report.degenerate}};
  ctx.finish(m, out);
}

// ---------------------------------------------------------------------------

// stimulus_id plus the first of prediction / score / mos.
std::map<std::string, double> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  const csv::Table t = csv::read(in, path.string());
  const std::size_t id = t.require("stimulus_id", path.string());
  long col = -1;
  for (const char* name : {"prediction", "score", "mos"}) {
    if (col < 0) col = t.column(name);
  }
  if (col < 0) throw IoError(path.string() + ": needs a prediction, score or mos column");
  std::map<std::string, double> out;
  for (const auto& r : t.rows) {
    if (!out.emplace(r[id], csv::parse_double(r[static_cast<std::size_t>(col)], path.string())).second) {
      throw ValidationError(path.string() + ": duplicate stimulus " + r[id]);
    }
  }
  return out;
}

// Predictions aligned with the MOS table rows.
std::vector<double> align(const std::map<std::string, double>& pred, const MosTable& mos,
                          const fs::path& what) {
  std::vector<double> out;
  for (const MosRow& row : mos.rows) {
    const auto it = pred.find(row.stimulus_id);
    if (it == pred.end()) throw ValidationError(what.string() + ": no prediction for " + row.stimulus_id);
    out.push_back(it->second);
  }
  return out;
}

struct EvalArgs {
  std::string pred;
  std::string mos;
};

void run_eval(Context& ctx, const EvalArgs& a, const CLI::App& sub) {
  const json s = ctx.section("eval", {"pred", "mos"});
  const fs::path pred_path = setting<std::string>(sub.get_option("--pred"), a.pred, s, "pred", "");
  const fs::path mos_path = setting<std::string>(sub.get_option("--mos"), a.mos, s, "mos", "");
  if (pred_path.empty() || mos_path.empty()) throw UsageError("--pred and --mos are required");
  const fs::path out = ctx.out(s);
  RunManifest m = ctx.manifest("eval", s);
  const MosTable table = read_mos_csv(mos_path);
  const std::vector<double> pred = align(read_predictions(pred_path), table, pred_path);
  std::vector<double> truth;
  for (const MosRow& r : table.rows) truth.push_back(r.mos);
  const json report = report_json(evaluate(pred, truth, {8, 500, m.seed}));
  write_text(out, report.dump(2) + "\n");
  log("eval", "srcc " + csv::format_double(report["srcc"].get<double>()));

  m.config = {{"pred", pred_path.string()}, {"mos", mos_path.string()}, {"out", out.string()}};
  m.add_input(pred_path);
  m.add_input(mos_path);
  m.add_output(out);
  m.summary = report;
  ctx.finish(m, out);
}

struct StatsArgs {
  std::string pred_a;
  std::string pred_b;
  std::string mos;
  double alpha = 0.05;
};

void run_stats_test(Context& ctx, const StatsArgs& a, const CLI::App& sub) {
  const json s = ctx.section("stats-test", {"pred_a", "pred_b", "mos", "alpha"});
  const fs::path pa = setting<std::string>(sub.get_option("--pred-a"), a.pred_a, s, "pred_a", "");
  const fs::path pb = setting<std::string>(sub.get_option("--pred-b"), a.pred_b, s, "pred_b", "");
  const fs::path mos_path = setting<std::string>(sub.get_option("--mos"), a.mos, s, "mos", "");
  if (pa.empty() || pb.empty() || mos_path.empty()) {
    throw UsageError("--pred-a, --pred-b and --mos are required");
  }
  const double alpha = setting<double>(sub.get_option("--alpha"), a.alpha, s, "alpha", 0.05);
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const fs::path out = ctx.out(s);
  RunManifest m = ctx.manifest("stats-test", s);

  const MosTable table = read_mos_csv(mos_path);
  std::vector<double> truth;
  for (const MosRow& r : table.rows) truth.push_back(r.mos);
  auto residuals = [&](const fs::path& path) {
    const LogisticFit fit = logistic_fit(align(read_predictions(path), table, path), truth,
                                         {8, 500, m.seed});
    std::vector<double> res(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) res[i] = fit.mapped[i] - truth[i];
    return res;
  };
  const std::vector<double> ra = residuals(pa);
  const std::vector<double> rb = residuals(pb);
  const ResidualTest t = residual_test(ra, rb, alpha);
  const json report{{"n", truth.size()},       {"alpha", alpha},
                    {"verdict", to_string(t.verdict)}, {"f_ratio", t.f_ratio},
                    {"critical", t.critical},  {"p_value", t.p_value}};
  write_text(out, report.dump(2) + "\n");
  log("stats-test", to_string(t.verdict));

  m.config = {{"pred_a", pa.string()}, {"pred_b", pb.string()}, {"mos", mos_path.string()},
              {"alpha", alpha},        {"out", out.string()}};
  m.add_input(pa);
  m.add_input(pb);
  m.add_input(mos_path);
  m.add_output(out);
  m.summary = report;
  ctx.finish(m, out);
}

}  // namespace

void add_train(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<TrainArgs>();
  CLI::App* sub = app.add_subcommand("train", "Train the quality model (or pretrain the aesthetic backbone)");
  sub->add_option("--manifest", args->manifest, "dataset manifest (CSV or JSON lines)");
  sub->add_option("--mode", args->mode, "quality | aesthetic");
  sub->add_option("--aesthetic", args->aesthetic, "frozen aesthetic backbone weights");
  sub->add_option("--predictions", args->predictions, "test-split predictions CSV");
  sub->add_flag("--all-splits", args->all_splits, "run every split; --out becomes a directory");
  sub->add_option("--split-index", args->split_index, "which split to train on");
  sub->add_option("--preset", args->preset, "model preset: desk | paper");
  sub->add_option("--epochs", args->epochs, "training epochs")->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", args->batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  sub->add_option("--resize", args->resize, "resize side before cropping")->check(CLI::PositiveNumber);
  sub->add_option("--crop", args->crop, "crop side (must equal the backbone input size)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--lr", args->lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  sub->callback([&ctx, args, sub] { run_train(ctx, *args, *sub); });
}

void add_eval(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<EvalArgs>();
  CLI::App* sub = app.add_subcommand("eval", "SRCC/PLCC/KRCC/RMSE of predictions against MOS");
  sub->add_option("--pred", args->pred, "predictions CSV (stimulus_id + prediction|score|mos)");
  sub->add_option("--mos", args->mos, "MOS CSV");
  sub->callback([&ctx, args, sub] { run_eval(ctx, *args, *sub); });
}

void add_stats_test(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<StatsArgs>();
  CLI::App* sub = app.add_subcommand("stats-test", "F-test on the residual variances of two models");
  sub->add_option("--pred-a", args->pred_a, "predictions of model A");
  sub->add_option("--pred-b", args->pred_b, "predictions of model B");
  sub->add_option("--mos", args->mos, "MOS CSV");
  sub->add_option("--alpha", args->alpha, "significance level");
  sub->callback([&ctx, args, sub] { run_stats_test(ctx, *args, *sub); });
}

}  // namespace cgiqa::cli
