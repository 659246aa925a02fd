#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "dan/flow_align.hpp"
#include "dan/video_data.hpp"

namespace fs = std::filesystem;

namespace dan {
namespace {

static_assert(std::endian::native == std::endian::little, "flow files assume a little-endian host");

void put_u32(std::ostream& out, uint32_t value) { out.write(reinterpret_cast<const char*>(&value), 4); }

uint32_t get_u32(std::istream& in, const fs::path& path) {
  uint32_t value = 0;
  if (!in.read(reinterpret_cast<char*>(&value), 4)) throw IoError("truncated flow file " + path.string());
  return value;
}

}  // namespace

void write_flow_file(const fs::path& path, const FlowField& flow) {
  require_image(flow.vectors, 2, "write_flow_file");
  if (flow.vectors.size(0) != 1) throw DimensionError("write_flow_file: expects a single field, got " + shape_string(flow.vectors));
  const auto data = flow.vectors.detach().to(torch::kFloat32).contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write flow file " + path.string());
  put_u32(out, static_cast<uint32_t>(flow.height()));
  put_u32(out, static_cast<uint32_t>(flow.width()));
  out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
            static_cast<std::streamsize>(data.numel() * sizeof(float)));
  if (!out) throw IoError("failed writing flow file " + path.string());
}

FlowField read_flow_file(const fs::path& path, FlowDirection direction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read flow file " + path.string());
  const uint32_t h = get_u32(in, path);
  const uint32_t w = get_u32(in, path);
  auto vectors = torch::empty({1, 2, static_cast<int64_t>(h), static_cast<int64_t>(w)}, torch::kFloat32);
  const auto bytes = static_cast<std::streamsize>(vectors.numel() * sizeof(float));
  if (!in.read(reinterpret_cast<char*>(vectors.data_ptr<float>()), bytes)) {
    throw IoError("truncated flow file " + path.string());
  }
  return {vectors, direction};
}

fs::path FlowCache::key_path(const std::string& video_id, int64_t frame_index, FlowDirection direction) const {
  const std::string stem = frame_file_name(frame_index);
  const std::string base = stem.substr(0, stem.size() - 4);
  return root_ / video_id / (base + (direction == FlowDirection::kForward ? "_fwd" : "_bwd") + ".flo");
}

void FlowCache::store(const std::string& video_id, int64_t frame_index, const FlowField& flow) const {
  const fs::path path = key_path(video_id, frame_index, flow.direction);
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  write_flow_file(path, flow);
}

std::optional<FlowField> FlowCache::load(const std::string& video_id, int64_t frame_index,
                                         FlowDirection direction) const {
  const fs::path path = key_path(video_id, frame_index, direction);
  if (!fs::exists(path)) return std::nullopt;
  return read_flow_file(path, direction);
}

}  // namespace dan
