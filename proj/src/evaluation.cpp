#include "dan/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "dan/image_io.hpp"

namespace dan {

double psnr(const Tensor& prediction, const Tensor& target, const PsnrOptions& options) {
  if (!prediction.defined() || !target.defined() || prediction.sizes() != target.sizes()) {
    throw DimensionError("psnr: size mismatch " + (prediction.defined() ? shape_string(prediction) : "[]") +
                         " vs " + (target.defined() ? shape_string(target) : "[]"));
  }
  Tensor a = prediction.detach().to(torch::kFloat64);
  Tensor b = target.detach().to(torch::kFloat64);
  if (options.quantized) {
    a = quantize_8bit(a);
    b = quantize_8bit(b);
  }
  const double mse = (a - b).square().mean().item<double>();
  if (mse <= 0.0) return options.cap;
  return std::min(options.cap, 10.0 * std::log10(1.0 / mse));
}

namespace {

struct ModeInfo {
  AblationMode mode;
  std::string_view name;
};

constexpr ModeInfo kModes[] = {
    {AblationMode::kPpnOnly, "ppn-only"},       {AblationMode::kPpnAbdn, "ppn+abdn"},
    {AblationMode::kFull, "ppn+abdn+fan"},      {AblationMode::kAbdnOnly, "abdn-only"},
    {AblationMode::kNoNlb, "no-nlb"},           {AblationMode::kNoOccAbdn, "no-occ-abdn"},
    {AblationMode::kNoOccFan, "no-occ-fan"},
};

}  // namespace

AblationMode parse_ablation_mode(std::string_view name) {
  if (name == "ppn") return AblationMode::kPpnOnly;
  if (name == "full") return AblationMode::kFull;
  for (const auto& m : kModes) {
    if (m.name == name) return m.mode;
  }
  throw ArgumentError("unknown ablation mode '" + std::string(name) + "'");
}

std::string_view to_string(AblationMode mode) {
  for (const auto& m : kModes) {
    if (m.mode == mode) return m.name;
  }
  return "?";
}

std::vector<AblationMode> all_ablation_modes() {
  std::vector<AblationMode> out;
  for (const auto& m : kModes) out.push_back(m.mode);
  return out;
}

StageOptions stage_options(AblationMode mode) {
  StageOptions s;
  switch (mode) {
    case AblationMode::kPpnOnly:
      s.bypass_abdn = true;
      s.bypass_fan = true;
      break;
    case AblationMode::kPpnAbdn:
      s.bypass_fan = true;
      break;
    case AblationMode::kFull:
      break;
    case AblationMode::kAbdnOnly:
      s.bypass_ppn = true;
      s.bypass_fan = true;
      break;
    case AblationMode::kNoNlb:
      s.use_nlb = false;
      break;
    case AblationMode::kNoOccAbdn:
      s.abdn_occlusion = false;
      break;
    case AblationMode::kNoOccFan:
      s.fan_occlusion = false;
      break;
  }
  return s;
}

ReportedStage reported_stage(AblationMode mode) {
  switch (mode) {
    case AblationMode::kPpnOnly:
      return ReportedStage::kPreprocessed;
    case AblationMode::kPpnAbdn:
    case AblationMode::kAbdnOnly:
      return ReportedStage::kDeblurred;
    default:
      return ReportedStage::kAggregated;
  }
}

bool requires_retraining(AblationMode mode) {
  return mode == AblationMode::kAbdnOnly || mode == AblationMode::kNoNlb || mode == AblationMode::kNoOccAbdn ||
         mode == AblationMode::kNoOccFan;
}

void check_mode_compatible(AblationMode mode, const CheckpointData& checkpoint) {
  const StageOptions s = stage_options(mode);
  std::vector<std::string> needed;
  if (!s.bypass_ppn) needed.push_back("ppn.");
  if (!s.bypass_abdn) needed.push_back("abdn.");
  if (!s.bypass_fan) needed.push_back("fan.");
  for (const auto& prefix : needed) {
    if (!checkpoint.has_prefix(prefix)) {
      throw IncompatibleCheckpointError("mode " + std::string(to_string(mode)) + " needs " +
                                        prefix.substr(0, prefix.size() - 1) + " weights the checkpoint lacks");
    }
  }
}

std::vector<std::pair<std::string, double>> EvalReport::per_video() const {
  std::vector<std::pair<std::string, double>> means;
  std::map<std::string, std::pair<double, int64_t>> acc;
  for (const auto& f : frames) {
    auto [it, inserted] = acc.try_emplace(f.video_id, 0.0, 0);
    if (inserted) means.emplace_back(f.video_id, 0.0);
    it->second.first += f.psnr;
    ++it->second.second;
  }
  for (auto& [id, mean] : means) mean = acc[id].first / static_cast<double>(acc[id].second);
  return means;
}

double EvalReport::overall() const {
  if (frames.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& f : frames) sum += f.psnr;
  return sum / static_cast<double>(frames.size());
}

EvalReport evaluate(DanModel model, const std::vector<TrainingSequence>& dataset, FlowBackend& backend,
                    AblationMode mode, const EvalOptions& options) {
  torch::NoGradGuard no_grad;
  model->eval();
  EvalReport report;
  report.mode = std::string(to_string(mode));
  report.config_fingerprint = options.config_fingerprint;
  report.config = options.config;
  if (requires_retraining(mode)) report.notes.push_back("mode " + report.mode + " requires a model trained in it");
  const ReportedStage stage = reported_stage(mode);
  for (const auto& clip : dataset) {
    const PipelineOutput out = run_video(clip.blurry_frames(), model, backend, {.stages = stage_options(mode)});
    const std::vector<Tensor>& frames = stage == ReportedStage::kPreprocessed ? out.preprocessed_center
                                        : stage == ReportedStage::kDeblurred  ? out.deblurred
                                                                              : out.aggregated;
    for (int64_t i = 0; i < clip.length(); ++i) {
      report.frames.push_back({clip.video_id, i, psnr(frames[i], clip.pairs[i].sharp, options.psnr)});
    }
  }
  return report;
}

EvalReport ablate(DanModel model, const CheckpointData& checkpoint, const std::vector<TrainingSequence>& dataset,
                  FlowBackend& backend, AblationMode mode, const EvalOptions& options) {
  check_mode_compatible(mode, checkpoint);
  return evaluate(std::move(model), dataset, backend, mode, options);
}

std::string TrendCheck::describe() const {
  return std::string("full>=ppn+abdn: ") + (full_over_ppn_abdn ? "ok" : "FAILED") +
         ", ppn+abdn>=ppn-only: " + (ppn_abdn_over_ppn ? "ok" : "FAILED");
}

TrendCheck check_trend(double full, double ppn_abdn, double ppn_only, double tolerance) {
  return {full >= ppn_abdn - tolerance, ppn_abdn >= ppn_only - tolerance};
}

EvalReport evaluate_inputs(const std::vector<TrainingSequence>& dataset, const EvalOptions& options) {
  EvalReport report;
  report.mode = "input";
  report.config_fingerprint = options.config_fingerprint;
  report.config = options.config;
  for (const auto& clip : dataset) {
    for (int64_t i = 0; i < clip.length(); ++i) {
      report.frames.push_back({clip.video_id, i, psnr(clip.pairs[i].blurry, clip.pairs[i].sharp, options.psnr)});
    }
  }
  return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << "video_id,frame_index,psnr\n" << std::setprecision(12);
  for (const auto& f : report.frames) {
    if (f.video_id.find_first_of(",\n") != std::string::npos) throw ArgumentError("report: bad video id " + f.video_id);
    out << f.video_id << ',' << f.frame_index << ',' << f.psnr << '\n';
  }
  out << "# mode=" << report.mode << '\n';
  out << "# config_fingerprint=" << report.config_fingerprint << '\n';
  for (const auto& [id, mean] : report.per_video()) out << "# video " << id << " mean_psnr=" << mean << '\n';
  out << "# frames=" << report.frames.size() << '\n';
  out << "# overall_mean_psnr=" << report.overall() << '\n';
  for (const auto& note : report.notes) out << "# note " << note << '\n';
  for (const auto& [key, value] : report.config) out << "# config " << key << '=' << value << '\n';
  if (!out) throw IoError("failed writing report " + path.string());
}

EvalReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  EvalReport report;
  std::string line;
  if (!std::getline(in, line) || line != "video_id,frame_index,psnr") {
    throw IoError("report " + path.string() + " lacks the expected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(line.find_first_not_of("# "));
      if (body.rfind("mode=", 0) == 0) report.mode = body.substr(5);
      if (body.rfind("config_fingerprint=", 0) == 0) report.config_fingerprint = body.substr(19);
      if (body.rfind("note ", 0) == 0) report.notes.push_back(body.substr(5));
      if (body.rfind("config ", 0) == 0) {
        const std::string entry = body.substr(7);
        const auto eq = entry.find('=');
        if (eq != std::string::npos) report.config.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
      }
      continue;
    }
    std::istringstream row(line);
    FrameScore f;
    std::string index;
    std::string value;
    if (!std::getline(row, f.video_id, ',') || !std::getline(row, index, ',') || !std::getline(row, value)) {
      throw IoError("report " + path.string() + ": malformed row '" + line + "'");
    }
    try {
      f.frame_index = std::stoll(index);
      f.psnr = std::stod(value);
    } catch (const std::logic_error&) {
      throw IoError("report " + path.string() + ": malformed row '" + line + "'");
    }
    report.frames.push_back(std::move(f));
  }
  return report;
}

std::string fingerprint(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace dan
