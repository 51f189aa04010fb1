#include "cogen/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "cogen/error.hpp"
#include "cogen/rng.hpp"

namespace cogen {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::act_only: return "act";
    case Phase::joint: return "joint";
    default: return "response";
  }
}

template <typename Real>
BatchLosses<Real> batch_losses(const CogenModel<Real>& model, const Batch& batch, Phase phase,
                               const CogenModel<Real>* act_source) {
  if (phase == Phase::response_only && !act_source) {
    throw ContractError("response-only training needs a model supplying act hidden states");
  }
  const bool want_act = phase != Phase::response_only;
  const bool want_resp = phase != Phase::act_only;
  std::vector<Tensor<Real>> act_sums, resp_sums;
  std::size_t act_tokens = 0, resp_tokens = 0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto source = batch.row_source(r);
    const auto act_mask = batch.row_act_mask(r);
    const auto acts = batch.row_acts(r);
    const auto belief = batch.row_belief(r);
    const auto dual = model.encode_shared(source, act_mask);
    Tensor<Real> hidden;
    if (want_act) {
      auto af = model.act_forward(dual, belief, acts);
      auto l = sequence_loss(af.logits, acts);
      act_sums.push_back(l.sum);
      act_tokens += l.tokens;
      hidden = af.hidden;
    }
    if (want_resp) {
      if (phase == Phase::response_only) {
        NoGradGuard no_grad;
        const auto src_dual = act_source->encode_shared(source, act_mask);
        hidden = act_source->act_forward(src_dual, belief, acts).hidden.detach();
      }
      const auto response = batch.row_response(r);
      auto l = sequence_loss(model.response_forward(dual, hidden, response), response);
      resp_sums.push_back(l.sum);
      resp_tokens += l.tokens;
    }
  }
  BatchLosses<Real> out;
  auto mean_of = [](const std::vector<Tensor<Real>>& sums, std::size_t tokens, const char* what) {
    if (tokens == 0) throw ContractError(std::string("batch has no ") + what + " target tokens");
    Tensor<Real> total = sums[0];
    for (std::size_t i = 1; i < sums.size(); ++i) total = add(total, sums[i]);
    return scale(total, static_cast<Real>(1.0 / static_cast<double>(tokens)));
  };
  if (want_act) out.act = mean_of(act_sums, act_tokens, "act");
  if (want_resp) out.response = mean_of(resp_sums, resp_tokens, "response");
  return out;
}

template <typename Real>
Tensor<Real> combine_losses(const CogenModel<Real>& model, const BatchLosses<Real>& losses, const LossMode& mode,
                            Phase phase) {
  if (phase == Phase::act_only) return losses.act;
  if (phase == Phase::response_only) return losses.response;
  if (mode.kind == LossKind::weighted) return weighted_sum_loss(losses.act, losses.response, mode.alpha);
  return uncertainty_loss(losses.act, losses.response, model.s1(), model.s2());
}

StepResult train_step(CogenModel<float>& model, const Batch& batch, AdamState<float>& adam, const LossMode& mode,
                      Phase phase, const CogenModel<float>* act_source) {
  auto& params = model.params();
  params.zero_grad();
  const auto losses = batch_losses(model, batch, phase, act_source);
  const auto total = combine_losses(model, losses, mode, phase);
  StepResult r;
  r.act_loss = losses.act.defined() ? losses.act.item() : 0.0;
  r.response_loss = losses.response.defined() ? losses.response.item() : 0.0;
  r.total = total.item();
  if (!std::isfinite(r.total)) throw NumericError("training loss is not finite");
  backward(total);
  const auto tensors = params.tensors();
  adam_step<float>(tensors, adam);
  return r;
}

std::string format_epoch_log(const EpochLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu phase=%s act_loss=%.9g response_loss=%.9g total=%.9g sigma1_sq=%.9g sigma2_sq=%.9g",
                log.epoch, phase_name(log.phase), log.act_loss, log.response_loss, log.total, log.sigma1_sq,
                log.sigma2_sq);
  return buf;
}

Trainer::Trainer(CogenModel<float>& model, std::vector<EncodedTurn> turns, TrainConfig cfg,
                 const CogenModel<float>* act_source)
    : model_(model),
      turns_(std::move(turns)),
      cfg_(cfg),
      act_source_(act_source),
      adam_(AdamConfig{cfg.lr}, model.params().size()) {
  if (turns_.empty()) throw DataError("training corpus is empty");
  if (cfg_.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(cfg_.lr > 0)) throw ConfigError("lr must be positive");
  if (cfg_.phase == Phase::response_only && !act_source_) {
    throw ConfigError("response-only training needs an act model");
  }
}

std::size_t Trainer::total_epochs() const {
  return cfg_.phase == Phase::joint ? cfg_.warmup_epochs + cfg_.epochs : cfg_.epochs;
}

Phase Trainer::phase_of(std::size_t epoch) const {
  if (cfg_.phase == Phase::joint && epoch < cfg_.warmup_epochs) return Phase::act_only;
  return cfg_.phase;
}

EpochLog Trainer::run_epoch() {
  if (finished()) throw ContractError("training already finished");
  EpochLog log;
  log.epoch = next_epoch_;
  log.phase = phase_of(next_epoch_);
  const auto batches = batchify(turns_, cfg_.batch_size, mix_seed(cfg_.seed, next_epoch_));
  for (const auto& b : batches) {
    const auto s = train_step(model_, b, adam_, cfg_.loss, log.phase, act_source_);
    log.act_loss += s.act_loss;
    log.response_loss += s.response_loss;
    log.total += s.total;
  }
  const double n = static_cast<double>(batches.size());
  log.act_loss /= n;
  log.response_loss /= n;
  log.total /= n;
  log.sigma1_sq = std::exp(static_cast<double>(model_.s1().item()));
  log.sigma2_sq = std::exp(static_cast<double>(model_.s2().item()));
  ++next_epoch_;
  if (cfg_.stop_loss > 0 && log.phase != Phase::act_only) {
    const bool act_ok = cfg_.phase == Phase::response_only || log.act_loss < cfg_.stop_loss;
    if (act_ok && log.response_loss < cfg_.stop_loss) stopped_ = true;
  }
  if (cfg_.stop_loss > 0 && cfg_.phase == Phase::act_only && log.act_loss < cfg_.stop_loss) stopped_ = true;
  return log;
}

void Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  while (!finished()) {
    const auto log = run_epoch();
    if (on_epoch) on_epoch(log);
  }
}

Checkpoint Trainer::checkpoint(std::map<std::string, std::string> metadata) const {
  auto ckpt = capture_checkpoint(model_.params(), &adam_);
  ckpt.metadata = std::move(metadata);
  ckpt.metadata["next_epoch"] = std::to_string(next_epoch_);
  ckpt.metadata["stopped"] = stopped_ ? "1" : "0";
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  restore_checkpoint(ckpt, model_.params(), &adam_);
  auto it = ckpt.metadata.find("next_epoch");
  next_epoch_ = it == ckpt.metadata.end() ? 0 : std::stoul(it->second);
  auto st = ckpt.metadata.find("stopped");
  stopped_ = st != ckpt.metadata.end() && st->second == "1";
}

template BatchLosses<float> batch_losses(const CogenModel<float>&, const Batch&, Phase, const CogenModel<float>*);
template BatchLosses<double> batch_losses(const CogenModel<double>&, const Batch&, Phase, const CogenModel<double>*);
template Tensor<float> combine_losses(const CogenModel<float>&, const BatchLosses<float>&, const LossMode&, Phase);
template Tensor<double> combine_losses(const CogenModel<double>&, const BatchLosses<double>&, const LossMode&, Phase);

}  // namespace cogen
