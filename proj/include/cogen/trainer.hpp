#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cogen/checkpoint.hpp"
#include "cogen/corpus.hpp"
#include "cogen/model.hpp"
#include "cogen/optim.hpp"

namespace cogen {

// act_only: encoder + act branch (warm-up, and the act model of the pipeline
// ablation). response_only: response loss with act hidden states supplied by a
// separate frozen model. joint: both losses combined by the loss mode.
enum class Phase { act_only, joint, response_only };

const char* phase_name(Phase p);

template <typename Real>
struct BatchLosses {
  Tensor<Real> act;       // per-token mean, undefined when not computed
  Tensor<Real> response;  // per-token mean, undefined when not computed
};

// Teacher-forced forward over every row of `batch`. For response_only the act
// hidden states come from `act_source` (gold act prefix, no gradient).
template <typename Real>
BatchLosses<Real> batch_losses(const CogenModel<Real>& model, const Batch& batch, Phase phase,
                               const CogenModel<Real>* act_source = nullptr);

template <typename Real>
Tensor<Real> combine_losses(const CogenModel<Real>& model, const BatchLosses<Real>& losses, const LossMode& mode,
                            Phase phase);

struct StepResult {
  double act_loss = 0;
  double response_loss = 0;
  double total = 0;
};

// One forward, one backward, one Adam step.
StepResult train_step(CogenModel<float>& model, const Batch& batch, AdamState<float>& adam, const LossMode& mode,
                      Phase phase, const CogenModel<float>* act_source = nullptr);

struct TrainConfig {
  std::size_t epochs = 300;        // joint (or single-phase) epochs
  std::size_t warmup_epochs = 10;  // act-only epochs before joint training
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  LossMode loss;
  Phase phase = Phase::joint;
  // Stop early once the epoch's mean act and response losses both fall
  // below this value (0 disables).
  double stop_loss = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  Phase phase = Phase::joint;
  double act_loss = 0, response_loss = 0, total = 0;
  double sigma1_sq = 1, sigma2_sq = 1;
};

std::string format_epoch_log(const EpochLog& log);

class Trainer {
 public:
  Trainer(CogenModel<float>& model, std::vector<EncodedTurn> turns, TrainConfig cfg,
          const CogenModel<float>* act_source = nullptr);

  std::size_t next_epoch() const { return next_epoch_; }
  std::size_t total_epochs() const;
  bool finished() const { return stopped_ || next_epoch_ >= total_epochs(); }
  Phase phase_of(std::size_t epoch) const;

  EpochLog run_epoch();
  // Runs until finished, calling `on_epoch` after each epoch.
  void run(const std::function<void(const EpochLog&)>& on_epoch = {});

  // Parameters, optimizer state and the epoch counter.
  Checkpoint checkpoint(std::map<std::string, std::string> metadata = {}) const;
  void restore(const Checkpoint& ckpt);

 private:
  CogenModel<float>& model_;
  std::vector<EncodedTurn> turns_;
  TrainConfig cfg_;
  const CogenModel<float>* act_source_;
  AdamState<float> adam_;
  std::size_t next_epoch_ = 0;
  bool stopped_ = false;
};

}  // namespace cogen
