#include "smartbird/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace smartbird {

static_assert(std::endian::native == std::endian::little,
              "tensor dump format assumes a little-endian host");

void write_tensor_dump(std::ostream& os, const Tensor& t) {
  const uint32_t rank = static_cast<uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int i = 0; i < t.rank(); ++i) {
    const uint32_t d = static_cast<uint32_t>(t.dim(i));
    os.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  os.write(reinterpret_cast<const char*>(t.values().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

Tensor read_tensor_dump(std::istream& is) {
  uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!is || rank > 8) throw std::runtime_error("bad tensor dump header");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = 0;
    is.read(reinterpret_cast<char*>(&d), sizeof(d));
    shape[i] = static_cast<int>(d);
  }
  const int64_t n = shape_numel(shape);
  std::vector<float> vals(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(vals.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw std::runtime_error("truncated tensor dump");
  return Tensor::from(std::move(shape), std::move(vals));
}

void save_checkpoint(const std::string& path, const NamedParams& params,
                     const std::string& meta_json) {
  nlohmann::json header;
  header["meta"] = meta_json.empty()
                       ? nlohmann::json::object()
                       : nlohmann::json::parse(meta_json);
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    plist.push_back(std::move(p));
  }
  header["params"] = std::move(plist);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << header.dump() << '\n';
  for (const auto& [name, t] : params) write_tensor_dump(f, t);
  if (!f) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header_line;
  std::getline(f, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad checkpoint header in " + path + ": " +
                             e.what());
  }
  Checkpoint ck;
  ck.meta_json = header.value("meta", nlohmann::json::object()).dump();
  for (const auto& p : header.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    Tensor t = read_tensor_dump(f);
    const Shape expect = p.at("shape").get<Shape>();
    if (t.shape() != expect) {
      throw ArtifactMismatchError("checkpoint tensor " + name +
                                  " has shape " + shape_str(t.shape()) +
                                  ", header says " + shape_str(expect));
    }
    ck.params.emplace_back(name, std::move(t));
  }
  return ck;
}

Tensor Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ArtifactMismatchError("checkpoint missing parameter: " + name);
}

void restore_params(const Checkpoint& ck, const NamedParams& into) {
  if (ck.params.size() != into.size()) {
    throw ArtifactMismatchError(
        "checkpoint has " + std::to_string(ck.params.size()) +
        " parameters, model expects " + std::to_string(into.size()));
  }
  for (const auto& [name, dst] : into) {
    Tensor src = ck.get(name);
    if (src.shape() != dst.shape()) {
      throw ArtifactMismatchError("parameter " + name + " shape mismatch: " +
                                  shape_str(src.shape()) + " vs " +
                                  shape_str(dst.shape()));
    }
    Tensor d = dst;
    std::copy(src.values().begin(), src.values().end(), d.values().begin());
  }
}

uint64_t fnv1a_hash(const std::vector<std::string>& items) {
  uint64_t h = 1469598103934665603ull;
  auto feed = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  };
  for (const std::string& s : items) {
    for (char c : s) feed(c);
    feed('\n');
  }
  return h;
}

}  // namespace smartbird
