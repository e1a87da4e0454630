#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace wdail::ad {

// All tape values are dense double matrices; scalars are 1x1 and vectors are
// single-row or single-column matrices. Row-major so raw buffers match the
// on-disk layouts.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Op {
  Leaf,
  // Public op kinds accepted by record().
  Add,
  Sub,
  Mul,
  MatMul,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Neg,
  Sum,
  Mean,
  Square,
  Sqrt,
  Clamp,
  MinElem,
  L2NormRows,
  ConcatCols,
  Scale,
  // Internal kinds emitted by the backward recorder. record() rejects these;
  // they exist so the recorded backward pass stays differentiable.
  Div,
  MatMulTA,  // a^T * b
  MatMulTB,  // a * b^T
  RowSum,    // m x n -> m x 1
  ColSum,    // m x n -> 1 x n
  SliceCols,
  PadCols,
};

const char* op_name(Op op);
Op parse_op(const std::string& name);  // public kinds only

class Tape;

// Handle to a node on a tape.
struct Ten {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& val() const;
  double scalar() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

// Append-only operation tape. Node inputs always reference strictly earlier
// nodes; forward values are materialized eagerly at emit time.
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double c0 = 0.0;
    double c1 = 0.0;
    Mat val;
  };

  Ten leaf(Mat value);
  Ten leaf(double value);

  int size() const { return static_cast<int>(nodes_.size()); }
  void truncate(int n) { nodes_.resize(static_cast<std::size_t>(n)); }
  void reserve(int n) { nodes_.reserve(static_cast<std::size_t>(n)); }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }

  Ten emit(Op op, int a, int b, double c0, double c1, Mat val);

 private:
  std::vector<Node> nodes_;
};

// Gradients of one backward pass, keyed by node id. Nodes the output does not
// depend on are absent.
class GradMap {
 public:
  explicit GradMap(int n) : grads_(static_cast<std::size_t>(n)), present_(static_cast<std::size_t>(n), false) {}

  bool has(int id) const { return id >= 0 && id < size() && present_[static_cast<std::size_t>(id)]; }
  const Mat& at(int id) const { return grads_[static_cast<std::size_t>(id)]; }
  Mat get(int id, Eigen::Index rows, Eigen::Index cols) const {
    return has(id) ? grads_[static_cast<std::size_t>(id)] : Mat::Zero(rows, cols);
  }
  void set(int id, Mat g) {
    grads_[static_cast<std::size_t>(id)] = std::move(g);
    present_[static_cast<std::size_t>(id)] = true;
  }
  int size() const { return static_cast<int>(grads_.size()); }

 private:
  std::vector<Mat> grads_;
  std::vector<char> present_;
};

// Expression-friendly free functions. Each checks shapes, computes the
// forward value immediately and appends one node.
Ten add(Ten a, Ten b);
Ten sub(Ten a, Ten b);
Ten mul(Ten a, Ten b);
Ten matmul(Ten a, Ten b);
Ten tanh(Ten a);
Ten sigmoid(Ten a);
Ten exp(Ten a);
Ten log(Ten a);
Ten neg(Ten a);
Ten sum(Ten a);
Ten mean(Ten a);
Ten square(Ten a);
Ten sqrt(Ten a);
Ten clamp(Ten a, double lo, double hi);
Ten min_elementwise(Ten a, Ten b);
Ten l2norm_rows(Ten a);
Ten concat_columns(Ten a, Ten b);
Ten scale(Ten a, double c);

// Generic dispatch over the public op kinds; kept as the uniform entry point
// the tests drive.
Ten record(Tape& tape, Op op, const std::vector<Ten>& inputs, double c0 = 0.0,
           double c1 = 0.0);

// d(output)/d(node) for every node the scalar output depends on. The tape is
// restored to its pre-call length, so the call is re-entrant.
GradMap backward(Tape& tape, Ten output);

// Records d(output)/d(wrt) as new nodes on the tape and returns the handle,
// so expressions of the gradient stay differentiable. Returns a zero leaf of
// wrt's shape when output does not depend on wrt.
Ten input_gradient_as_node(Tape& tape, Ten output, Ten wrt);

// Raw forward kernels, shared by the tape and the no-tape network forwards so
// the two paths agree bitwise.
namespace kernels {
Mat broadcast_binary(const char* op, const Mat& a, const Mat& b,
                     double (*f)(double, double));
Mat tanh(const Mat& a);
Mat sigmoid(const Mat& a);
Mat l2norm_rows(const Mat& a);
inline constexpr double kNormEps = 1e-12;
}  // namespace kernels

}  // namespace wdail::ad
