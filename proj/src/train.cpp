#include "cinformer/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "cinformer/checkpoint.hpp"
#include "cinformer/model.hpp"

namespace cinformer {

namespace fs = std::filesystem;

AdamWState make_adamw_state(const ParamStore<float>& params) {
  AdamWState s;
  for (const auto& [path, e] : params) {
    if (!e.trainable) continue;
    s.m[path].assign(e.value.numel(), 0.0f);
    s.v[path].assign(e.value.numel(), 0.0f);
  }
  return s;
}

void adamw_step(ParamStore<float>& params, AdamWState& state, double lr, double weight_decay) {
  std::size_t trainable = 0;
  for (const auto& [_, e] : params) trainable += e.trainable ? 1 : 0;
  if (trainable != state.m.size() || trainable != state.v.size()) {
    throw StateError("optimizer tracks " + std::to_string(state.m.size()) + " parameters, store has " +
                     std::to_string(trainable) + " trainable");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [path, e] : params) {
    if (!e.trainable) continue;
    auto mit = state.m.find(path);
    auto vit = state.v.find(path);
    if (mit == state.m.end() || vit == state.v.end()) throw StateError("no optimizer moments for " + path);
    std::vector<float>& m = mit->second;
    std::vector<float>& v = vit->second;
    const std::size_t n = e.value.numel();
    if (m.size() != n || v.size() != n) throw StateError("optimizer moments for " + path + " have the wrong size");
    std::span<float> p = e.value.mutable_data();
    const bool has_grad = e.value.has_grad();
    std::span<const float> g = e.value.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      double pi = static_cast<double>(p[i]);
      pi -= lr * weight_decay * pi;
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      pi -= lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      p[i] = static_cast<float>(pi);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr,
                   double min_lr) {
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(std::min(step, total_steps) - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["miou"] = miou;
  j["pixel_acc"] = pixel_accuracy;
  j["per_class_iou"] = nlohmann::json::array();
  for (double v : per_class_iou) {
    if (std::isnan(v)) {
      j["per_class_iou"].push_back(nullptr);
    } else {
      j["per_class_iou"].push_back(v);
    }
  }
  return j.dump();
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt) {
  if (pred.size() != gt.size()) {
    throw DataError("prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                    std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || gt[i] < 0 || static_cast<std::size_t>(pred[i]) >= k_ ||
        static_cast<std::size_t>(gt[i]) >= k_) {
      throw DataError("class index out of range at pixel " + std::to_string(i));
    }
    ++counts_[static_cast<std::size_t>(gt[i]) * k_ + static_cast<std::size_t>(pred[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw StateError("confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

MetricReport ConfusionMatrix::report() const {
  MetricReport r;
  r.num_classes = k_;
  r.confusion = counts_;
  std::uint64_t total = 0;
  std::uint64_t correct = 0;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      row += counts_[c * k_ + j];
      col += counts_[j * k_ + c];
    }
    const std::uint64_t inter = counts_[c * k_ + c];
    const std::uint64_t uni = row + col - inter;
    total += row;
    correct += inter;
    if (uni == 0) {
      r.per_class_iou.push_back(std::nan(""));
    } else {
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      r.per_class_iou.push_back(iou);
      sum += iou;
      ++present;
    }
  }
  r.miou = present > 0 ? sum / static_cast<double>(present) : 0.0;
  r.pixel_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

MetricReport miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt,
                  std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return cm.report();
}

std::vector<std::int32_t> predict_classes(const ad::Tensor<float>& logits) {
  const std::vector<std::size_t> idx = ad::argmax(logits, 1);
  return std::vector<std::int32_t>(idx.begin(), idx.end());
}

MetricReport evaluate(const ParamStore<float>& params, const ModelConfig& config, const Dataset& data) {
  if (data.size != config.input_size) {
    throw DataError("dataset images are " + std::to_string(data.size) + "x" + std::to_string(data.size) +
                    " but the model expects " + std::to_string(config.input_size));
  }
  if (data.num_classes != config.num_classes) {
    throw DataError("dataset has " + std::to_string(data.num_classes) + " classes, model " +
                    std::to_string(config.num_classes));
  }
  ad::NoGradGuard no_grad;
  ConfusionMatrix total(config.num_classes);
  for (std::size_t i = 0; i < data.count(); ++i) {
    const std::vector<std::size_t> one{i};
    const auto logits = forward(params, batch_images(data, one), config);
    total.add(predict_classes(logits), batch_labels(data, one));
  }
  return total.report();
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::vector<std::size_t> order = ad::iota_indices(count);
  SeededRng rng = SeededRng::substream(seed ^ 0x5eed5eed5eed5eedull, epoch);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

namespace {

// Drops log lines whose step exceeds `step` (resume point).
void truncate_metrics(const std::string& path, std::uint64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::string kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) throw FormatError(path + ": malformed metrics line");
    if (j["step"].get<std::uint64_t>() <= step) kept += line + "\n";
  }
  in.close();
  write_file_atomic(path, std::vector<std::uint8_t>(kept.begin(), kept.end()));
}

}  // namespace

TrainResult train_loop(const Config& config, const Dataset& train, const Dataset& eval,
                       const TrainOptions& options) {
  validate(config);
  const ModelConfig& mc = config.model;
  const TrainConfig& tc = config.train;
  if (train.count() == 0) throw DataError("training split is empty");
  if (train.size != mc.input_size) {
    throw DataError("dataset images are " + std::to_string(train.size) + "x" + std::to_string(train.size) +
                    " but model.input_size is " + std::to_string(mc.input_size));
  }
  if (train.num_classes != mc.num_classes) {
    throw DataError("dataset has " + std::to_string(train.num_classes) + " classes but model.num_classes is " +
                    std::to_string(mc.num_classes));
  }
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create " + options.out_dir + ": " + ec.message());
  const std::string metrics_path = (fs::path(options.out_dir) / "metrics.jsonl").string();
  const std::string last_path = (fs::path(options.out_dir) / "last.ckpt").string();
  const std::string best_path = (fs::path(options.out_dir) / "best.ckpt").string();

  TrainingState state;
  if (options.resume) {
    state = load_checkpoint(*options.resume);
    if (to_json(state.config) != to_json(config)) {
      throw ConfigError("resume checkpoint " + *options.resume + " was written with a different configuration");
    }
    truncate_metrics(metrics_path, state.optimizer.step);
  } else {
    state.config = config;
    SeededRng rng(tc.seed);
    state.params = init_model_params(mc, rng);
    state.optimizer = make_adamw_state(state.params);
    std::ofstream(metrics_path, std::ios::trunc);
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path);

  const auto warmup = static_cast<std::size_t>(std::floor(tc.warmup_frac * static_cast<double>(tc.steps)));
  const double min_lr = tc.lr * tc.min_lr_frac;
  const std::size_t stop = std::min(tc.steps, options.max_steps.value_or(tc.steps));
  TrainResult result;
  result.best_miou = state.best_miou;

  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  for (std::size_t step = state.optimizer.step; step < stop; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t j = 0; j < tc.batch; ++j) {
      const std::size_t position = step * tc.batch + j;
      const std::size_t epoch = position / train.count();
      if (epoch != cached_epoch) {
        order = epoch_order(tc.seed, epoch, train.count());
        cached_epoch = epoch;
      }
      batch.push_back(order[position % train.count()]);
    }
    const double lr = lr_schedule(step + 1, tc.steps, warmup, tc.lr, min_lr);
    state.params.zero_grad();
    const auto logits = forward(state.params, batch_images(train, batch), mc);
    const auto loss = ad::cross_entropy(logits, batch_labels(train, batch));
    const float loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step + 1));
    }
    ad::backward(loss);
    adamw_step(state.params, state.optimizer, lr, tc.weight_decay);
    result.last_loss = loss_value;

    nlohmann::json line;
    line["step"] = step + 1;
    line["lr"] = lr;
    line["loss"] = static_cast<double>(loss_value);
    const bool last = step + 1 == tc.steps;
    if ((tc.eval_every > 0 && (step + 1) % tc.eval_every == 0) || last) {
      const MetricReport report = evaluate(state.params, mc, eval.count() > 0 ? eval : train);
      line["miou"] = report.miou;
      line["per_class_iou"] = nlohmann::json::parse(report.to_json())["per_class_iou"];
      result.last_report = report;
      if (static_cast<float>(report.miou) > state.best_miou) {
        state.best_miou = static_cast<float>(report.miou);
        save_checkpoint(best_path, state);
      }
      save_checkpoint(last_path, state);
    }
    metrics << line.dump() << "\n";
    metrics.flush();
    if (options.verbose) std::fprintf(stderr, "step %zu lr %.6g loss %.6f\n", step + 1, lr, loss_value);
  }
  save_checkpoint(last_path, state);
  if (!metrics) throw IoError("write failed: " + metrics_path);
  result.steps = state.optimizer.step;
  result.best_miou = state.best_miou;
  return result;
}

}  // namespace cinformer
