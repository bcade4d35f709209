#include "evod/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

namespace evod {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path blob_path(const fs::path& manifest) {
  fs::path p = manifest;
  p.replace_extension(".bin");
  return p;
}

void put_le(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

json read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw CheckpointError("cannot open checkpoint manifest " + manifest.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw CheckpointError(manifest.string() + ": malformed manifest: " + e.what());
  }
  if (m.value("format", "") != "evod-params") throw CheckpointError(manifest.string() + ": not a parameter manifest");
  const int version = m.value("version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError(manifest.string() + ": unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  return m;
}

}  // namespace

void save_params(const grad::ParamList& params, const fs::path& manifest, const json& extra) {
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  json arrays = json::array();
  std::vector<unsigned char> blob;
  std::size_t offset = 0;
  for (const grad::Param* p : params) {
    arrays.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"offset", offset}});
    for (double v : p->value.values()) put_le(blob, v);
    offset += p->value.size();
  }
  const fs::path bin = blob_path(manifest);
  {
    std::ofstream out(bin, std::ios::binary);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("failed writing " + bin.string());
  }
  const json m{{"format", "evod-params"},
               {"version", kCheckpointVersion},
               {"blob", bin.filename().string()},
               {"count", offset},
               {"arrays", arrays},
               {"extra", extra}};
  std::ofstream out(manifest);
  out << m.dump(2) << '\n';
  if (!out) throw CheckpointError("failed writing " + manifest.string());
}

json load_params(const grad::ParamList& params, const fs::path& manifest) {
  const json m = read_manifest(manifest);
  const json& arrays = m.at("arrays");
  if (arrays.size() != params.size()) {
    throw CheckpointError(manifest.string() + ": holds " + std::to_string(arrays.size()) + " arrays, model has " +
                          std::to_string(params.size()));
  }
  const fs::path bin = manifest.parent_path() / m.at("blob").get<std::string>();
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint blob " + bin.string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t count = m.at("count").get<std::size_t>();
  if (blob.size() != count * 8) {
    throw CheckpointError(bin.string() + ": expected " + std::to_string(count * 8) + " bytes, found " +
                          std::to_string(blob.size()));
  }
  // Validate everything before touching any parameter.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& a = arrays[i];
    const std::string name = a.at("name").get<std::string>();
    if (name != params[i]->name) {
      throw CheckpointError(manifest.string() + ": array " + std::to_string(i) + " is '" + name + "', expected '" +
                            params[i]->name + "'");
    }
    const auto rows = a.at("rows").get<std::size_t>();
    const auto cols = a.at("cols").get<std::size_t>();
    if (rows != params[i]->value.rows() || cols != params[i]->value.cols()) {
      throw CheckpointError(manifest.string() + ": '" + name + "' has shape (" + std::to_string(rows) + "x" +
                            std::to_string(cols) + "), model expects " + params[i]->value.shape_str());
    }
    if (a.at("offset").get<std::size_t>() + rows * cols > count) {
      throw CheckpointError(manifest.string() + ": '" + name + "' runs past the end of the blob");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t off = arrays[i].at("offset").get<std::size_t>();
    grad::Mat& v = params[i]->value;
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = get_le(blob.data() + 8 * (off + k));
    params[i]->zero_grad();
  }
  return m.value("extra", json::object());
}

json read_checkpoint_extra(const fs::path& manifest) { return read_manifest(manifest).value("extra", json::object()); }

}  // namespace evod
