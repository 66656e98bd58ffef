#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace amoe {

// Row-major so that a sample is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = std::ptrdiff_t;
using IndexList = std::vector<Index>;

}  // namespace amoe
