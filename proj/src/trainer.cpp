#include <cmath>
#include <iomanip>
#include <random>

#include "dan/evaluation.hpp"
#include "dan/training.hpp"

namespace dan {

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append) {
  const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw IoError("cannot open metrics log " + path.string());
  if (fresh) out_ << "iteration,l_ppn,l_abdn,l_fan,l_total,lr,val_psnr\n";
  out_.flush();
}

void MetricsLog::write(const IterationLog& e) {
  out_ << e.iteration << std::setprecision(9) << ',' << e.loss.l_ppn << ',' << e.loss.l_abdn << ',' << e.loss.l_fan
       << ',' << e.loss.l_total << ',' << e.lr << ',';
  if (e.val_psnr) out_ << *e.val_psnr;
  out_ << '\n';
  out_.flush();
}

Trainer::Trainer(DanModel model, FlowBackend& backend, TrainConfig config, std::vector<TrainingSequence> dataset,
                 StageOptions stages)
    : model_(std::move(model)),
      backend_(backend),
      config_(config),
      dataset_(std::move(dataset)),
      stages_(stages),
      optimizer_([this] {
        std::vector<std::pair<std::string, Tensor>> params;
        for (auto& item : model_->named_parameters()) params.emplace_back(item.key(), item.value());
        return params;
      }(), config.beta1, config.beta2, config.epsilon) {
  config_.validate();
  if (dataset_.empty()) throw ArgumentError("trainer: empty dataset");
  for (const auto& seq : dataset_) {
    if (seq.length() < config_.seq_len) {
      throw ArgumentError("trainer: video '" + seq.video_id + "' has " + std::to_string(seq.length()) +
                          " frames, fewer than seq_len " + std::to_string(config_.seq_len));
    }
  }
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> Trainer::sample_batch(int64_t iteration) const {
  std::seed_seq seq{static_cast<uint32_t>(config_.seed), static_cast<uint32_t>(config_.seed >> 32),
                    static_cast<uint32_t>(iteration), static_cast<uint32_t>(static_cast<uint64_t>(iteration) >> 32)};
  std::mt19937_64 rng(seq);
  AugmentOptions aug;
  aug.crop = config_.patch;
  aug.random_flips = config_.flips;
  aug.color_jitter = config_.color_jitter;
  aug.noise_variance = config_.noise_variance;

  std::vector<std::vector<Tensor>> blurry(config_.seq_len);
  std::vector<std::vector<Tensor>> sharp(config_.seq_len);
  for (int b = 0; b < config_.batch; ++b) {
    const auto& video = dataset_[std::uniform_int_distribution<size_t>(0, dataset_.size() - 1)(rng)];
    const int64_t start = std::uniform_int_distribution<int64_t>(0, video.length() - config_.seq_len)(rng);
    const uint64_t aug_seed = rng();
    const TrainingSequence clip = augment(slice_sequence(video, start, config_.seq_len), aug_seed, aug);
    for (int t = 0; t < config_.seq_len; ++t) {
      blurry[t].push_back(clip.pairs[t].blurry);
      sharp[t].push_back(clip.pairs[t].sharp);
    }
  }
  std::pair<std::vector<Tensor>, std::vector<Tensor>> out;
  for (int t = 0; t < config_.seq_len; ++t) {
    out.first.push_back(torch::cat(blurry[t], 0));
    out.second.push_back(torch::cat(sharp[t], 0));
  }
  return out;
}

LossBreakdown Trainer::unroll(const std::vector<Tensor>& blurry, const std::vector<Tensor>& sharp, bool backward) {
  const int64_t length = static_cast<int64_t>(blurry.size());
  DanPipeline pipeline(model_, backend_, stages_);
  RecurrentState state;
  SequenceOutputs chunk;
  const LossCounts counts = LossCounts::for_sequence(length);
  LossBreakdown total;

  auto flush = [&] {
    LossTerms terms = loss_terms(chunk, sharp, counts);
    const LossBreakdown v = terms.values();
    if (!std::isfinite(v.l_total)) {
      throw DivergenceError("training diverged at iteration " + std::to_string(iteration_) + ": loss is " +
                            std::to_string(v.l_total));
    }
    const Tensor objective = terms.total();
    if (backward && objective.requires_grad()) objective.backward();
    total.l_ppn += v.l_ppn;
    total.l_abdn += v.l_abdn;
    total.l_fan += v.l_fan;
    total.l_total += v.l_total;
    chunk.clear();
    state.detach();
  };

  for (int64_t k = 0; k < length; ++k) {
    StepResult r = pipeline.step(window_at(blurry, k), state);
    chunk.append(r.record, length);
    state = std::move(r.state);
    if (config_.bptt_window > 0 && (k + 1) % config_.bptt_window == 0) flush();
  }
  StepResult last = pipeline.finish(state);
  chunk.append(last.record, length);
  flush();
  return total;
}

LossBreakdown Trainer::train_iteration() {
  if (iteration_ >= config_.max_iters) throw StateError("trainer: max_iters reached");
  auto [blurry, sharp] = sample_batch(iteration_);
  model_->train();
  optimizer_.zero_grad();
  const LossBreakdown loss = unroll(blurry, sharp, true);
  for (const auto& [name, p] : optimizer_.params()) {
    if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) {
      throw DivergenceError("training diverged at iteration " + std::to_string(iteration_) +
                            ": non-finite gradient in " + name);
    }
  }
  optimizer_.step(scheduled_lr(config_, iteration_));
  ++iteration_;
  return loss;
}

LossBreakdown Trainer::evaluate_batch(int64_t iteration) {
  torch::NoGradGuard no_grad;
  auto [blurry, sharp] = sample_batch(iteration);
  return unroll(blurry, sharp, false);
}

CheckpointData Trainer::checkpoint(std::vector<std::pair<std::string, std::string>> config_snapshot) const {
  DanModel model = model_;
  return capture_checkpoint(model, &optimizer_, iteration_, std::move(config_snapshot));
}

void Trainer::restore(const CheckpointData& data) {
  restore_model(model_, data);
  if (data.optimizer_steps > 0 || data.has_prefix("adam.")) {
    optimizer_.load_state(data.tensor_map());
  }
  optimizer_.set_steps(data.optimizer_steps);
  iteration_ = data.iteration;
}

double Trainer::validation_psnr(const TrainingSequence& clip) {
  torch::NoGradGuard no_grad;
  const PipelineOutput out = run_video(clip.blurry_frames(), model_, backend_, {.stages = stages_});
  double sum = 0.0;
  for (int64_t i = 0; i < clip.length(); ++i) sum += psnr(out.aggregated[i], clip.pairs[i].sharp);
  return sum / static_cast<double>(clip.length());
}

}  // namespace dan
