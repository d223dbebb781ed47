#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stereopose/tensor.hpp"

namespace stereopose {

// One trainable tensor plus its RMSprop accumulator. Frozen parameters are
// excluded from optimizer updates (value and accumulator both stay put).
template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  std::vector<T> acc;
  bool frozen = false;
};

template <typename T>
class ParamStoreT {
 public:
  int add(const std::string& name, TensorT<T> value);
  int find(const std::string& name) const;  // -1 when absent

  ParameterT<T>& param(int id) { return params_[static_cast<size_t>(id)]; }
  const ParameterT<T>& param(int id) const { return params_[static_cast<size_t>(id)]; }

  size_t size() const { return params_.size(); }
  size_t value_count() const;

  void freeze_prefix(const std::string& prefix, bool frozen = true);
  std::vector<int> ids_with_prefix(const std::string& prefix) const;

 private:
  std::vector<ParameterT<T>> params_;
  std::map<std::string, int> index_;
};

// acc <- rho * acc + (1 - rho) * g^2;  p <- p - lr * g / sqrt(acc + eps).
// grads[id] aligns with parameter ids; empty slots are treated as zero
// gradients. Frozen parameters and their accumulators are untouched.
template <typename T>
void rmsprop_step(ParamStoreT<T>& store, const std::vector<std::vector<T>>& grads, double lr,
                  double rho, double eps);

using ParamStore = ParamStoreT<float>;

// Checkpoint layout: magic "SPNC", version u16, count u32, then per parameter
// name_len u16 + name bytes, rank u8, extents u32 each, raw little-endian f32
// values, f32 accumulator values, frozen flag u8.
std::vector<std::uint8_t> save_checkpoint(const ParamStore& store);
ParamStore load_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint_file(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint_file(const std::string& path);

}  // namespace stereopose
