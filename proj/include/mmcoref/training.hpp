#pragma once

// Focal-loss objective, Adam, and the mini-batch training loop with early
// stopping on development object F1.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmcoref/data_model.hpp"
#include "mmcoref/embeddings.hpp"
#include "mmcoref/feature_bank.hpp"
#include "mmcoref/grad_check.hpp"
#include "mmcoref/model.hpp"
#include "mmcoref/tensor.hpp"

namespace mmcoref {

struct LossConfig {
  double gamma = 2.0;
  double alpha_pos = 5.0;
  double alpha_neg = 1.0;
};

inline constexpr double kProbClamp = 1e-7;

/// sum_i -alpha_t (1 - p_t)^gamma ln(p_t) over the objects of one instance,
/// with probabilities clamped to [1e-7, 1 - 1e-7]. Labels must be 0 or 1.
Tensor focal_loss(const Tensor& probs, std::span<const double> labels, const LossConfig& config);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Learning rate used for fine-tuning a large pretrained encoder.
inline constexpr double kPretrainedLearningRate = 5e-6;

struct OptimState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimState init_optim_state(const std::vector<NamedTensor>& params, const AdamConfig& config);

/// One bias-corrected Adam update. grads[k] belongs to params[k]. A
/// non-finite gradient aborts with NumericError naming the parameter, before
/// any parameter is touched.
void adam_step(std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& grads,
               OptimState& state);

/// Every parameter of the model as a named handle (shares storage).
std::vector<NamedTensor> named_parameters(ModelParams& params);

struct TrainRunConfig {
  std::size_t batch_size = 16;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  double threshold = 0.5;
  int jobs = 1;
  LossConfig loss;
  AdamConfig adam;
};

nlohmann::json run_config_to_json(const TrainRunConfig& config);
TrainRunConfig run_config_from_json(const nlohmann::json& j, TrainRunConfig base = {});

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_f1 = 0.0;
};

struct TrainResult {
  Model best;
  std::vector<EpochRecord> history;
  double best_f1 = 0.0;
  std::size_t best_epoch = 0;
};

/// Loss and summed gradients (visit order) of `instances[begin, end)`,
/// averaged over `divisor`. Items are evaluated on independent parameter
/// replicas (in parallel with jobs > 1) and reduced in index order, so the
/// result does not depend on the thread count.
struct BatchGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};
BatchGradient batch_gradient(const Model& model, const std::vector<const Instance*>& batch,
                             const LossConfig& loss, int jobs);

/// Trains from `initial`; after each epoch scores dev object F1 and keeps the
/// best (strictly improving) parameters. Stops once `patience` + 1
/// consecutive epochs fail to improve, or at max_epochs.
TrainResult train(const Model& initial, const std::vector<Instance>& train_set,
                  const std::vector<Instance>& dev_set, const TrainRunConfig& run);

/// Fills channel dims (when 0) from the bank; ValidationError on mismatch.
void resolve_channels(ModelConfig& config, const FeatureBank& bank);

/// Builds the vocabulary, instances and initial model, then trains.
TrainResult train_model(const Dataset& train_data, const Dataset& dev_data, const FeatureBank& bank,
                        ModelConfig model_config, const TrainRunConfig& run);

void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

/// Gradient check of the full forward pass plus focal loss on one instance.
/// Every parameter group is perturbed.
GradReport model_grad_check(Model& model, const Instance& instance, AttentionMode mode,
                            const LossConfig& loss, double eps = 1e-5);

}  // namespace mmcoref
