#pragma once

#include <wdail/autodiff.hpp>

#include <cstdint>
#include <numeric>
#include <vector>

namespace wdail {

// Shape-tagged row-major buffer, the unit of the binary file formats.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  static Tensor from_mat(const ad::Mat& m, int rank = 2) {
    Tensor t;
    if (rank == 2) {
      t.dims = {static_cast<std::uint32_t>(m.rows()),
                static_cast<std::uint32_t>(m.cols())};
    } else if (rank == 1) {
      t.dims = {static_cast<std::uint32_t>(m.size())};
    }  // rank 0: scalar, no dims
    t.data.assign(m.data(), m.data() + m.size());
    return t;
  }

  std::size_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }

  // Interprets rank-1 tensors as rows, rank-0 as 1x1.
  ad::Mat to_mat() const {
    Eigen::Index r = 1, c = 1;
    if (dims.size() == 1) {
      c = dims[0];
    } else if (dims.size() == 2) {
      r = dims[0];
      c = dims[1];
    }
    ad::Mat m(r, c);
    std::copy(data.begin(), data.end(), m.data());
    return m;
  }
};

}  // namespace wdail
