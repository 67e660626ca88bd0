// Dense matrix aliases and parameter containers shared by the adapter and
// the decoder.

#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

namespace covergen {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct NamedTensor {
  std::string name;
  Matrix<T>* value;
};

/// Pre-LN transformer layer. Bias matrices are empty in bias-free configs.
template <typename T>
struct LayerParams {
  Matrix<T> ln1_g, ln1_b;
  Matrix<T> w_qkv, b_qkv;
  Matrix<T> w_o, b_o;
  Matrix<T> ln2_g, ln2_b;
  Matrix<T> w_fc, b_fc;
  Matrix<T> w_proj, b_proj;

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    const std::pair<const char*, Matrix<T>*> all[] = {{"ln1_g", &ln1_g}, {"ln1_b", &ln1_b},
                         {"w_qkv", &w_qkv}, {"b_qkv", &b_qkv}, {"w_o", &w_o}, {"b_o", &b_o},
                         {"ln2_g", &ln2_g}, {"ln2_b", &ln2_b}, {"w_fc", &w_fc}, {"b_fc", &b_fc},
                         {"w_proj", &w_proj}, {"b_proj", &b_proj}};
    for (const auto& [n, m] : all) {
      if (m->size() > 0) out.push_back({prefix + n, m});
    }
  }
};

}  // namespace covergen
