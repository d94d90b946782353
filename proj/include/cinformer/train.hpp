#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cinformer/dataset.hpp"
#include "cinformer/params.hpp"

namespace cinformer {

/// Adam moments for every trainable parameter, keyed by path.
struct AdamWState {
  std::map<std::string, std::vector<float>, std::less<>> m;
  std::map<std::string, std::vector<float>, std::less<>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Zero moments shaped like the trainable parameters.
AdamWState make_adamw_state(const ParamStore<float>& params);

/// Decoupled decay (p -= lr*wd*p) then the bias-corrected Adam step.
/// Parameters without a gradient are treated as having a zero gradient;
/// non-trainable ones are left untouched.
void adamw_step(ParamStore<float>& params, AdamWState& state, double lr, double weight_decay);

/// Linear warmup from 0 to base_lr, then cosine decay to min_lr.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr,
                   double min_lr);

struct MetricReport {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> confusion;  // [gt][pred], row-major
  std::vector<double> per_class_iou;     // NaN where the class has zero union
  double miou = 0.0;
  double pixel_accuracy = 0.0;

  /// JSON object {miou, per_class_iou (null for excluded classes), pixel_acc}.
  std::string to_json() const;
};

/// Accumulates confusion counts; call order defines the summation order.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  void add(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt);
  void merge(const ConfusionMatrix& other);
  MetricReport report() const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

MetricReport miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt,
                  std::size_t num_classes);

/// Argmax class per pixel of logits [B,K,H,W], flat [B*H*W].
std::vector<std::int32_t> predict_classes(const ad::Tensor<float>& logits);

/// Evaluates every image of `data`; per-image confusions merge in index order.
MetricReport evaluate(const ParamStore<float>& params, const ModelConfig& config, const Dataset& data);

struct TrainOptions {
  std::string out_dir;
  std::optional<std::string> resume;
  // Stop after this many total steps (the run stays resumable).
  std::optional<std::size_t> max_steps;
  bool verbose = false;
};

struct TrainResult {
  std::size_t steps = 0;
  double last_loss = 0.0;
  float best_miou = -1.0f;
  std::optional<MetricReport> last_report;
};

/// Shuffled sample order: each epoch is a permutation seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count);

/// Trains on `train`, evaluating on `eval` every eval_every steps and at the
/// end. Writes last.ckpt, best.ckpt and metrics.jsonl into options.out_dir.
TrainResult train_loop(const Config& config, const Dataset& train, const Dataset& eval,
                       const TrainOptions& options);

}  // namespace cinformer
