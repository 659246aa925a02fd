#include "dan/training.hpp"

namespace dan {

void SequenceOutputs::append(const StepRecord& record, int64_t sequence_length) {
  const int64_t last = sequence_length - 1;
  if (record.preprocessed[0].defined()) {
    for (int s = 0; s < 3; ++s) {
      preprocessed.emplace_back(std::min(record.slot_indices[s], last), record.preprocessed[s]);
    }
  }
  if (record.deblurred.defined()) deblurred.emplace_back(record.center_index, record.deblurred);
  if (record.aggregated) aggregated.emplace_back(record.aggregated_index, *record.aggregated);
}

void SequenceOutputs::clear() {
  preprocessed.clear();
  deblurred.clear();
  aggregated.clear();
}

LossCounts LossCounts::of(const SequenceOutputs& outputs) {
  return {static_cast<int64_t>(outputs.preprocessed.size()), static_cast<int64_t>(outputs.deblurred.size()),
          static_cast<int64_t>(outputs.aggregated.size())};
}

LossCounts LossCounts::for_sequence(int64_t length) { return {3 * length, length, length}; }

LossBreakdown LossTerms::values() const {
  LossBreakdown b;
  b.l_ppn = ppn.item<double>();
  b.l_abdn = abdn.item<double>();
  b.l_fan = fan.item<double>();
  b.l_total = b.l_ppn + b.l_abdn + b.l_fan;
  return b;
}

namespace {

Tensor stage_sum(const std::vector<std::pair<int64_t, Tensor>>& outputs, const std::vector<Tensor>& targets,
                 int64_t count, const char* stage) {
  if (outputs.empty()) return torch::zeros({}, targets.front().options());
  if (count < static_cast<int64_t>(outputs.size())) {
    throw ContractError(std::string("loss: ") + stage + " has more outputs than its normaliser");
  }
  Tensor sum;
  for (const auto& [index, frame] : outputs) {
    if (index < 0 || index >= static_cast<int64_t>(targets.size())) {
      throw ContractError(std::string("loss: ") + stage + " output indexed " + std::to_string(index) +
                          " outside targets [0, " + std::to_string(targets.size()) + ")");
    }
    const Tensor& target = targets[index];
    if (frame.sizes() != target.sizes()) {
      throw ContractError(std::string("loss: ") + stage + " output " + shape_string(frame) +
                          " does not match target " + shape_string(target));
    }
    Tensor mse = torch::mse_loss(frame, target.to(frame.scalar_type()));
    sum = sum.defined() ? sum + mse : mse;
  }
  return sum / static_cast<double>(count);
}

}  // namespace

LossTerms loss_terms(const SequenceOutputs& outputs, const std::vector<Tensor>& targets, const LossCounts& counts) {
  if (targets.empty()) throw ContractError("loss: no targets");
  return {stage_sum(outputs.preprocessed, targets, counts.ppn, "PPN"),
          stage_sum(outputs.deblurred, targets, counts.abdn, "ABDN"),
          stage_sum(outputs.aggregated, targets, counts.fan, "FAN")};
}

LossBreakdown compute_losses(const SequenceOutputs& outputs, const std::vector<Tensor>& targets) {
  torch::NoGradGuard no_grad;
  return loss_terms(outputs, targets, LossCounts::of(outputs)).values();
}

}  // namespace dan
