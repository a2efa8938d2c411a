#include "mmcoref/training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>

#include "mmcoref/encoder.hpp"
#include "mmcoref/errors.hpp"
#include "mmcoref/evaluation.hpp"
#include "mmcoref/random.hpp"

namespace mmcoref {

using detail::Node;

Tensor focal_loss(const Tensor& probs, std::span<const double> labels, const LossConfig& config) {
  if (probs.size() != labels.size()) {
    throw DimensionError("focal_loss: " + std::to_string(probs.size()) + " probabilities for " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto p = probs.data();
  const double gamma = config.gamma;
  std::vector<double> dloss(p.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) {
      throw ContractError("focal_loss: label " + std::to_string(y) + " at object " +
                          std::to_string(i) + " is not 0 or 1");
    }
    const bool clamped = p[i] < kProbClamp || p[i] > 1.0 - kProbClamp;
    const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    const double q = y == 1.0 ? pc : 1.0 - pc;
    const double alpha = y == 1.0 ? config.alpha_pos : config.alpha_neg;
    const double log_q = std::log(q);
    total += -alpha * std::pow(1.0 - q, gamma) * log_q;
    if (clamped) continue;
    const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(1.0 - q, gamma - 1.0) * log_q;
    const double dq = -alpha * (std::pow(1.0 - q, gamma) / q - lead);
    dloss[i] = y == 1.0 ? dq : -dq;
  }
  return make_op(
      {1, 1}, {total}, {probs},
      [dloss = std::move(dloss)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dloss[i];
      },
      "focal_loss");
}

OptimState init_optim_state(const std::vector<NamedTensor>& params, const AdamConfig& config) {
  OptimState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.size(), 0.0);
    state.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& grads,
               OptimState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].tensor.size()) {
      throw DimensionError("adam_step: gradient of " + params[k].name + " has wrong size");
    }
    for (double g : grads[k]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + params[k].name);
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grads[k][i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

std::vector<NamedTensor> named_parameters(ModelParams& params) {
  std::vector<NamedTensor> out;
  params.visit([&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  return out;
}

nlohmann::json run_config_to_json(const TrainRunConfig& c) {
  return {{"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
          {"patience", c.patience},       {"seed", c.seed},
          {"threshold", c.threshold},     {"jobs", c.jobs},
          {"gamma", c.loss.gamma},        {"alpha_pos", c.loss.alpha_pos},
          {"alpha_neg", c.loss.alpha_neg}, {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},        {"beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon}};
}

TrainRunConfig run_config_from_json(const nlohmann::json& j, TrainRunConfig c) {
  if (!j.is_object()) throw ContractError("run config must be a JSON object");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  if (j.contains("recipe")) {
    const auto recipe = j.at("recipe").get<std::string>();
    if (recipe == "pretrained") {
      c.adam.learning_rate = kPretrainedLearningRate;
      c.batch_size = 16;
      c.max_epochs = 30;
    } else if (recipe != "default") {
      throw ContractError("unknown recipe '" + recipe + "' (expected default or pretrained)");
    }
  }
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("patience", c.patience);
  get("seed", c.seed);
  get("threshold", c.threshold);
  get("jobs", c.jobs);
  get("gamma", c.loss.gamma);
  get("alpha_pos", c.loss.alpha_pos);
  get("alpha_neg", c.loss.alpha_neg);
  get("learning_rate", c.adam.learning_rate);
  get("beta1", c.adam.beta1);
  get("beta2", c.adam.beta2);
  get("adam_epsilon", c.adam.epsilon);
  if (c.batch_size == 0) throw ContractError("batch_size must be positive");
  if (c.jobs < 1) throw ContractError("jobs must be at least 1");
  if (!(c.adam.learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  return c;
}

BatchGradient batch_gradient(const Model& model, const std::vector<const Instance*>& batch,
                             const LossConfig& loss, int jobs) {
  const std::size_t n = batch.size();
  std::vector<std::vector<std::vector<double>>> item_grads(n);
  std::vector<double> item_loss(n, 0.0);
  std::vector<std::exception_ptr> errors(n);

#pragma omp parallel for num_threads(std::max(jobs, 1)) schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(n); ++b) {
    try {
      ModelParams replica = model.params.clone(true);
      const Instance& inst = *batch[b];
      auto trace = forward(inst, replica, model.config, model.config.mode);
      Tensor l = focal_loss(trace.probs, inst.labels, loss);
      backward(l);
      item_loss[b] = l.item();
      auto& out = item_grads[b];
      replica.visit([&](const std::string&, const Tensor& t) {
        if (t.has_grad()) {
          out.emplace_back(t.grad().begin(), t.grad().end());
        } else {
          out.emplace_back(t.size(), 0.0);
        }
      });
    } catch (...) {
      errors[b] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BatchGradient result;
  model.params.visit(
      [&](const std::string&, const Tensor& t) { result.grads.emplace_back(t.size(), 0.0); });
  for (std::size_t b = 0; b < n; ++b) {
    result.loss += item_loss[b];
    for (std::size_t k = 0; k < result.grads.size(); ++k) {
      auto& dst = result.grads[k];
      const auto& src = item_grads[b][k];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  const double inv = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  result.loss *= inv;
  for (auto& g : result.grads) {
    for (double& v : g) v *= inv;
  }
  return result;
}

namespace {

double dev_f1(const Model& model, const std::vector<Instance>& dev, const TrainRunConfig& run) {
  std::vector<Instance> labelled;
  for (const auto& inst : dev) {
    if (inst.has_labels()) labelled.push_back(inst);
  }
  if (labelled.empty()) return 0.0;
  auto preds = predict_all(model, labelled, run.threshold, run.jobs);
  return object_f1(preds, gold_sets(labelled)).f1;
}

}  // namespace

TrainResult train(const Model& initial, const std::vector<Instance>& train_set,
                  const std::vector<Instance>& dev_set, const TrainRunConfig& run) {
  std::vector<const Instance*> pool;
  for (const auto& inst : train_set) {
    if (inst.has_labels()) pool.push_back(&inst);
  }
  if (pool.empty()) throw ContractError("training split has no labelled turns");
  if (run.batch_size == 0) throw ContractError("batch_size must be positive");

  Model model{initial.config, initial.vocab, initial.params.clone(true)};
  auto named = named_parameters(model.params);
  OptimState state = init_optim_state(named, run.adam);
  Rng rng(run.seed);

  TrainResult result{Model{model.config, model.vocab, model.params.clone(true)}, {}, -1.0, 0};
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= run.max_epochs; ++epoch) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += run.batch_size) {
      const std::size_t end = std::min(order.size(), start + run.batch_size);
      std::vector<const Instance*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(pool[order[k]]);
      auto grad = batch_gradient(model, batch, run.loss, run.jobs);
      loss_sum += grad.loss * static_cast<double>(batch.size());
      adam_step(named, grad.grads, state);
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(pool.size()),
                       dev_f1(model, dev_set, run)};
    result.history.push_back(record);
    if (record.dev_f1 > result.best_f1) {
      result.best_f1 = record.dev_f1;
      result.best_epoch = epoch;
      result.best.params = model.params.clone(true);
      stale = 0;
    } else if (++stale > run.patience) {
      break;
    }
  }
  if (result.best_f1 < 0.0) result.best_f1 = 0.0;
  return result;
}

void resolve_channels(ModelConfig& config, const FeatureBank& bank) {
  auto fill = [&](std::vector<ChannelSpec>& specs) {
    for (auto& spec : specs) {
      const std::size_t dim = bank.dim(spec.name);
      if (spec.dim == 0) {
        spec.dim = dim;
      } else if (spec.dim != dim) {
        throw ValidationError("channel " + spec.name + ": config dim " + std::to_string(spec.dim) +
                              " but feature file dim " + std::to_string(dim));
      }
    }
  };
  fill(config.image_channels);
  fill(config.kb_channels);
}

TrainResult train_model(const Dataset& train_data, const Dataset& dev_data, const FeatureBank& bank,
                        ModelConfig model_config, const TrainRunConfig& run) {
  if (train_data.dialogs.empty()) throw ContractError("training split is empty");
  resolve_channels(model_config, bank);
  Model model;
  model.vocab = build_vocab(train_data);
  model_config.vocab_size = model.vocab.size();
  model_config.validate();
  model.config = model_config;
  model.params = init_params(model_config);
  auto train_set = build_instances(train_data, bank, model.vocab, model.config);
  auto dev_set = build_instances(dev_data, bank, model.vocab, model.config);
  return train(model, train_set, dev_set, run);
}

void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : history) {
    out << nlohmann::json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"dev_f1", r.dev_f1}}
               .dump()
        << '\n';
  }
}

GradReport model_grad_check(Model& model, const Instance& instance, AttentionMode mode,
                            const LossConfig& loss, double eps) {
  auto named = named_parameters(model.params);
  auto fn = [&]() {
    auto trace = forward(instance, model.params, model.config, mode);
    return focal_loss(trace.probs, instance.labels, loss);
  };
  return grad_check(fn, named, eps);
}

}  // namespace mmcoref
