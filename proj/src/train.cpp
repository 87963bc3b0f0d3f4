#include "cgiqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cgiqa/csv.hpp"
#include "cgiqa/error.hpp"
#include "cgiqa/parallel.hpp"
#include "cgiqa/rng.hpp"

namespace cgiqa {

void TrainProtocol::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (repeats == 0) throw ConfigError("repeats must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (crop == 0 || resize < crop) throw ConfigError("need 0 < crop <= resize");
  adam.validate();
}

std::vector<double> Dataset::mos() const {
  std::vector<double> out;
  for (const auto& it : items) out.push_back(it.mos);
  return out;
}

std::vector<std::string> Dataset::groups() const {
  const bool any = std::any_of(items.begin(), items.end(),
                               [](const DatasetItem& it) { return !it.content_id.empty(); });
  if (!any) return {};
  std::vector<std::string> out;
  for (const auto& it : items) out.push_back(it.content_id.empty() ? "item:" + it.id : it.content_id);
  return out;
}

namespace {

void check_mos(double mos, const std::string& where) {
  if (!std::isfinite(mos) || mos < 0.0 || mos > 5.0) {
    throw ValidationError(where + ": MOS " + csv::format_double(mos) + " outside [0, 5]");
  }
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  Dataset ds;
  const std::string ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json") {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        DatasetItem item;
        item.image = resolve(j.at("image_path").get<std::string>());
        item.mos = j.at("mos").get<double>();
        item.id = j.value("stimulus_id", item.image.filename().string());
        item.content_id = j.value("content_id", "");
        ds.items.push_back(std::move(item));
      } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  } else {
    const csv::Table t = csv::read(in, path.string());
    const std::size_t ci = t.require("image_path", path.string());
    const std::size_t cm = t.require("mos", path.string());
    const long cs = t.column("stimulus_id");
    const long cc = t.column("content_id");
    for (const auto& row : t.rows) {
      DatasetItem item;
      item.image = resolve(row[ci]);
      item.mos = csv::parse_double(row[cm], "mos");
      item.id = cs >= 0 ? row[static_cast<std::size_t>(cs)] : item.image.filename().string();
      if (cc >= 0) item.content_id = row[static_cast<std::size_t>(cc)];
      ds.items.push_back(std::move(item));
    }
  }
  for (const auto& item : ds.items) check_mos(item.mos, path.string());
  return ds;
}

void write_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "stimulus_id,image_path,mos,content_id\n";
  const auto base = path.parent_path();
  for (const auto& it : dataset.items) {
    std::error_code ec;
    auto rel = std::filesystem::relative(it.image, base, ec);
    if (ec || rel.empty()) rel = it.image;
    out << csv::join({it.id, rel.string(), csv::format_double(it.mos), it.content_id}) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

PreparedImages prepare_images(const std::vector<Image>& images, std::size_t resize) {
  PreparedImages out;
  out.reserve(images.size());
  for (const Image& img : images) out.push_back(resize_bilinear(image_to_tensor(img), resize, resize));
  return out;
}

PreparedImages load_and_prepare(const Dataset& dataset, std::size_t resize, std::size_t threads) {
  PreparedImages out(dataset.items.size());
  parallel_for(dataset.items.size(), threads, [&](std::size_t i) {
    out[i] = resize_bilinear(image_to_tensor(load_image(dataset.items[i].image)), resize, resize);
  });
  return out;
}

namespace {

Tensor batch_of(const PreparedImages& images, const std::vector<std::size_t>& ids,
                std::size_t crop_size, Rng* rng) {
  Tensor batch({ids.size(), 3, crop_size, crop_size});
  const std::size_t plane = crop_size * crop_size * 3;
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const Tensor& src = images.at(ids[b]);
    Tensor c;
    if (rng) {
      const std::size_t h = src.dim(1), w = src.dim(2);
      std::uniform_int_distribution<std::size_t> top(0, h - crop_size), left(0, w - crop_size);
      const std::size_t t = top(*rng);
      c = crop(src, t, left(*rng), crop_size);
    } else {
      c = center_crop(src, crop_size);
    }
    std::copy(c.data().begin(), c.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * plane));
  }
  return batch;
}

template <typename Model>
TrainResult run_training(Model& model, const PreparedImages& images,
                         const std::vector<double>& targets, const std::vector<std::size_t>& items,
                         const TrainProtocol& protocol, const EpochCallback& on_epoch) {
  protocol.validate();
  if (items.empty()) throw ValidationError("training split is empty");
  for (std::size_t i : items) {
    if (i >= images.size() || i >= targets.size()) {
      throw ValidationError("training index " + std::to_string(i) + " out of range");
    }
  }
  Rng rng(derive_seed(protocol.seed, 0x7261696eULL));
  TrainResult result;
  std::vector<std::size_t> order(items);
  for (std::size_t epoch = 0; epoch < protocol.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += protocol.batch_size) {
      const std::size_t end = std::min(start + protocol.batch_size, order.size());
      const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor batch = batch_of(images, ids, protocol.crop, &rng);
      Tensor y({ids.size()});
      for (std::size_t b = 0; b < ids.size(); ++b) y[b] = targets[ids[b]];
      model.params().zero_grad();
      total += model.loss_and_backward(batch, y);
      ++batches;
      adam_step(model.params(), protocol.adam, ++result.steps);
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

}  // namespace

TrainResult train_model(TwoStreamModel& model, const PreparedImages& images,
                        const std::vector<double>& targets, const std::vector<std::size_t>& items,
                        const TrainProtocol& protocol, const EpochCallback& on_epoch) {
  return run_training(model, images, targets, items, protocol, on_epoch);
}

TrainResult train_aesthetic(AestheticRegressor& model, const PreparedImages& images,
                            const std::vector<double>& targets,
                            const std::vector<std::size_t>& items, const TrainProtocol& protocol,
                            const EpochCallback& on_epoch) {
  return run_training(model, images, targets, items, protocol, on_epoch);
}

std::vector<double> predict_items(const TwoStreamModel& model, const PreparedImages& images,
                                  const std::vector<std::size_t>& items, std::size_t crop_size,
                                  std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<double> out;
  out.reserve(items.size());
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, items.size());
    const std::vector<std::size_t> ids(items.begin() + static_cast<std::ptrdiff_t>(start),
                                       items.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor scores = model.predict(batch_of(images, ids, crop_size, nullptr));
    out.insert(out.end(), scores.data().begin(), scores.data().end());
  }
  return out;
}

}  // namespace cgiqa
