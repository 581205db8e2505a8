#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "smartbird/tensor.hpp"

namespace smartbird {

// Raised when a checkpoint does not match the artifacts it is loaded against
// (vocab hash, parameter set, shapes). The CLI maps this to exit code 4.
struct ArtifactMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Binary tensor dump: little-endian u32 rank, u32 dims[], f32 data[].
void write_tensor_dump(std::ostream& os, const Tensor& t);
Tensor read_tensor_dump(std::istream& is);

// Checkpoint file layout: one JSON header line (parameter names/shapes plus
// caller metadata), '\n', then the tensor dumps concatenated in header order.
void save_checkpoint(const std::string& path, const NamedParams& params,
                     const std::string& meta_json);

struct Checkpoint {
  NamedParams params;
  std::string meta_json;
  Tensor get(const std::string& name) const;  // throws ArtifactMismatchError
};
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into an existing parameter set; shapes must match.
void restore_params(const Checkpoint& ck, const NamedParams& into);

// FNV-1a over newline-joined tokens; used to detect vocab/checkpoint drift.
uint64_t fnv1a_hash(const std::vector<std::string>& items);

}  // namespace smartbird
