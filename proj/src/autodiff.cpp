#include "wdail/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace wdail::ad {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void fail(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

void check_same_tape(const char* op, Ten a, Ten b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape)
    fail(op, "operands must live on the same tape");
}

bool broadcast_ok(const Mat& a, const Mat& b) {
  Eigen::Index r = std::max(a.rows(), b.rows());
  Eigen::Index c = std::max(a.cols(), b.cols());
  auto fits = [](Eigen::Index n, Eigen::Index full) { return n == full || n == 1; };
  return fits(a.rows(), r) && fits(b.rows(), r) && fits(a.cols(), c) &&
         fits(b.cols(), c);
}

void check_broadcast(const char* op, const Mat& a, const Mat& b) {
  if (!broadcast_ok(a, b))
    fail(op, "shape mismatch (" + shape_str(a) + " vs " + shape_str(b) + ")");
}

void check_positive(const char* op, const Mat& a) {
  if ((a.array() <= 0.0).any())
    fail(op, "non-positive input (" + shape_str(a) + "); clamp first");
}

}  // namespace

namespace kernels {

Mat broadcast_binary(const char* op, const Mat& a, const Mat& b,
                     double (*f)(double, double)) {
  check_broadcast(op, a, b);
  Eigen::Index r = std::max(a.rows(), b.rows());
  Eigen::Index c = std::max(a.cols(), b.cols());
  Mat out(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    Eigen::Index ia = a.rows() == 1 ? 0 : i;
    Eigen::Index ib = b.rows() == 1 ? 0 : i;
    for (Eigen::Index j = 0; j < c; ++j) {
      out(i, j) = f(a(ia, a.cols() == 1 ? 0 : j), b(ib, b.cols() == 1 ? 0 : j));
    }
  }
  return out;
}

Mat tanh(const Mat& a) { return a.array().tanh().matrix(); }

Mat sigmoid(const Mat& a) {
  return (1.0 / (1.0 + (-a.array()).exp())).matrix();
}

Mat l2norm_rows(const Mat& a) {
  Mat out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    out(i, 0) = std::sqrt(a.row(i).squaredNorm() + kNormEps);
  return out;
}

}  // namespace kernels

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Neg: return "neg";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Clamp: return "clamp";
    case Op::MinElem: return "min-elementwise";
    case Op::L2NormRows: return "l2norm-rows";
    case Op::ConcatCols: return "concat-columns";
    case Op::Scale: return "scale";
    case Op::Div: return "div";
    case Op::MatMulTA: return "matmul-ta";
    case Op::MatMulTB: return "matmul-tb";
    case Op::RowSum: return "rowsum";
    case Op::ColSum: return "colsum";
    case Op::SliceCols: return "slice-columns";
    case Op::PadCols: return "pad-columns";
  }
  return "?";
}

Op parse_op(const std::string& name) {
  static const std::pair<const char*, Op> table[] = {
      {"add", Op::Add},           {"sub", Op::Sub},
      {"mul", Op::Mul},           {"matmul", Op::MatMul},
      {"tanh", Op::Tanh},         {"sigmoid", Op::Sigmoid},
      {"exp", Op::Exp},           {"log", Op::Log},
      {"neg", Op::Neg},           {"sum", Op::Sum},
      {"mean", Op::Mean},         {"square", Op::Square},
      {"sqrt", Op::Sqrt},         {"clamp", Op::Clamp},
      {"min-elementwise", Op::MinElem}, {"l2norm-rows", Op::L2NormRows},
      {"concat-columns", Op::ConcatCols}, {"scale", Op::Scale},
  };
  for (const auto& [n, op] : table)
    if (name == n) return op;
  throw std::invalid_argument("unknown op-kind: " + name);
}

const Mat& Ten::val() const { return tape->value(id); }

double Ten::scalar() const {
  const Mat& v = val();
  if (v.size() != 1)
    fail("scalar", "tensor is " + shape_str(v) + ", not a scalar");
  return v(0, 0);
}

Ten Tape::leaf(Mat value) {
  return emit(Op::Leaf, -1, -1, 0.0, 0.0, std::move(value));
}

Ten Tape::leaf(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return leaf(std::move(m));
}

Ten Tape::emit(Op op, int a, int b, double c0, double c1, Mat val) {
  nodes_.push_back(Node{op, a, b, c0, c1, std::move(val)});
  return Ten{this, static_cast<int>(nodes_.size()) - 1};
}

namespace {

Ten emit_binary(const char* name, Op op, Ten a, Ten b,
                double (*f)(double, double)) {
  check_same_tape(name, a, b);
  Mat v = kernels::broadcast_binary(name, a.val(), b.val(), f);
  return a.tape->emit(op, a.id, b.id, 0.0, 0.0, std::move(v));
}

}  // namespace

Ten add(Ten a, Ten b) {
  return emit_binary("add", Op::Add, a, b, [](double x, double y) { return x + y; });
}

Ten sub(Ten a, Ten b) {
  return emit_binary("sub", Op::Sub, a, b, [](double x, double y) { return x - y; });
}

Ten mul(Ten a, Ten b) {
  return emit_binary("mul", Op::Mul, a, b, [](double x, double y) { return x * y; });
}

Ten min_elementwise(Ten a, Ten b) {
  return emit_binary("min-elementwise", Op::MinElem, a, b,
                     [](double x, double y) { return x <= y ? x : y; });
}

namespace {
Ten div(Ten a, Ten b) {
  return emit_binary("div", Op::Div, a, b, [](double x, double y) { return x / y; });
}
}  // namespace

Ten matmul(Ten a, Ten b) {
  check_same_tape("matmul", a, b);
  const Mat& av = a.val();
  const Mat& bv = b.val();
  if (av.cols() != bv.rows())
    fail("matmul", "inner dimensions mismatch (" + shape_str(av) + " vs " +
                       shape_str(bv) + ")");
  return a.tape->emit(Op::MatMul, a.id, b.id, 0.0, 0.0, av * bv);
}

namespace {

Ten matmul_ta(Ten a, Ten b) {  // a^T * b
  check_same_tape("matmul-ta", a, b);
  const Mat& av = a.val();
  const Mat& bv = b.val();
  if (av.rows() != bv.rows())
    fail("matmul-ta", "dimensions mismatch (" + shape_str(av) + " vs " +
                          shape_str(bv) + ")");
  return a.tape->emit(Op::MatMulTA, a.id, b.id, 0.0, 0.0, av.transpose() * bv);
}

Ten matmul_tb(Ten a, Ten b) {  // a * b^T
  check_same_tape("matmul-tb", a, b);
  const Mat& av = a.val();
  const Mat& bv = b.val();
  if (av.cols() != bv.cols())
    fail("matmul-tb", "dimensions mismatch (" + shape_str(av) + " vs " +
                          shape_str(bv) + ")");
  return a.tape->emit(Op::MatMulTB, a.id, b.id, 0.0, 0.0, av * bv.transpose());
}

Ten rowsum(Ten a) {
  Mat v = a.val().rowwise().sum();
  return a.tape->emit(Op::RowSum, a.id, -1, 0.0, 0.0, std::move(v));
}

Ten colsum(Ten a) {
  Mat v = a.val().colwise().sum();
  return a.tape->emit(Op::ColSum, a.id, -1, 0.0, 0.0, std::move(v));
}

Ten slice_cols(Ten a, Eigen::Index start, Eigen::Index len) {
  Mat v = a.val().middleCols(start, len);
  return a.tape->emit(Op::SliceCols, a.id, -1, static_cast<double>(start),
                      static_cast<double>(len), std::move(v));
}

Ten pad_cols(Ten a, Eigen::Index start, Eigen::Index total) {
  const Mat& av = a.val();
  Mat v = Mat::Zero(av.rows(), total);
  v.middleCols(start, av.cols()) = av;
  return a.tape->emit(Op::PadCols, a.id, -1, static_cast<double>(start),
                      static_cast<double>(total), std::move(v));
}

}  // namespace

Ten tanh(Ten a) {
  return a.tape->emit(Op::Tanh, a.id, -1, 0.0, 0.0, kernels::tanh(a.val()));
}

Ten sigmoid(Ten a) {
  return a.tape->emit(Op::Sigmoid, a.id, -1, 0.0, 0.0, kernels::sigmoid(a.val()));
}

Ten exp(Ten a) {
  return a.tape->emit(Op::Exp, a.id, -1, 0.0, 0.0, a.val().array().exp().matrix());
}

Ten log(Ten a) {
  check_positive("log", a.val());
  return a.tape->emit(Op::Log, a.id, -1, 0.0, 0.0, a.val().array().log().matrix());
}

Ten neg(Ten a) {
  return a.tape->emit(Op::Neg, a.id, -1, 0.0, 0.0, (-a.val().array()).matrix());
}

Ten sum(Ten a) {
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  return a.tape->emit(Op::Sum, a.id, -1, 0.0, 0.0, std::move(v));
}

Ten mean(Ten a) {
  Mat v(1, 1);
  v(0, 0) = a.val().mean();
  return a.tape->emit(Op::Mean, a.id, -1, 0.0, 0.0, std::move(v));
}

Ten square(Ten a) {
  return a.tape->emit(Op::Square, a.id, -1, 0.0, 0.0,
                      a.val().array().square().matrix());
}

Ten sqrt(Ten a) {
  check_positive("sqrt", a.val());
  return a.tape->emit(Op::Sqrt, a.id, -1, 0.0, 0.0,
                      a.val().array().sqrt().matrix());
}

Ten clamp(Ten a, double lo, double hi) {
  if (!(lo <= hi)) fail("clamp", "lo must be <= hi");
  return a.tape->emit(Op::Clamp, a.id, -1, lo, hi,
                      a.val().array().max(lo).min(hi).matrix());
}

Ten l2norm_rows(Ten a) {
  return a.tape->emit(Op::L2NormRows, a.id, -1, 0.0, 0.0,
                      kernels::l2norm_rows(a.val()));
}

Ten concat_columns(Ten a, Ten b) {
  check_same_tape("concat-columns", a, b);
  const Mat& av = a.val();
  const Mat& bv = b.val();
  if (av.rows() != bv.rows())
    fail("concat-columns", "row counts differ (" + shape_str(av) + " vs " +
                               shape_str(bv) + ")");
  Mat v(av.rows(), av.cols() + bv.cols());
  v.leftCols(av.cols()) = av;
  v.rightCols(bv.cols()) = bv;
  return a.tape->emit(Op::ConcatCols, a.id, b.id, 0.0, 0.0, std::move(v));
}

Ten scale(Ten a, double c) {
  return a.tape->emit(Op::Scale, a.id, -1, c, 0.0, (a.val().array() * c).matrix());
}

namespace {

void need_inputs(Op op, const std::vector<Ten>& inputs, std::size_t n) {
  if (inputs.size() != n)
    fail(op_name(op), "expects " + std::to_string(n) + " input(s), got " +
                          std::to_string(inputs.size()));
}

}  // namespace

Ten record(Tape& tape, Op op, const std::vector<Ten>& inputs, double c0,
           double c1) {
  for (const Ten& t : inputs)
    if (t.tape != &tape) fail(op_name(op), "input not on this tape");
  switch (op) {
    case Op::Add: need_inputs(op, inputs, 2); return add(inputs[0], inputs[1]);
    case Op::Sub: need_inputs(op, inputs, 2); return sub(inputs[0], inputs[1]);
    case Op::Mul: need_inputs(op, inputs, 2); return mul(inputs[0], inputs[1]);
    case Op::MatMul: need_inputs(op, inputs, 2); return matmul(inputs[0], inputs[1]);
    case Op::Tanh: need_inputs(op, inputs, 1); return tanh(inputs[0]);
    case Op::Sigmoid: need_inputs(op, inputs, 1); return sigmoid(inputs[0]);
    case Op::Exp: need_inputs(op, inputs, 1); return exp(inputs[0]);
    case Op::Log: need_inputs(op, inputs, 1); return log(inputs[0]);
    case Op::Neg: need_inputs(op, inputs, 1); return neg(inputs[0]);
    case Op::Sum: need_inputs(op, inputs, 1); return sum(inputs[0]);
    case Op::Mean: need_inputs(op, inputs, 1); return mean(inputs[0]);
    case Op::Square: need_inputs(op, inputs, 1); return square(inputs[0]);
    case Op::Sqrt: need_inputs(op, inputs, 1); return sqrt(inputs[0]);
    case Op::Clamp: need_inputs(op, inputs, 1); return clamp(inputs[0], c0, c1);
    case Op::MinElem:
      need_inputs(op, inputs, 2);
      return min_elementwise(inputs[0], inputs[1]);
    case Op::L2NormRows: need_inputs(op, inputs, 1); return l2norm_rows(inputs[0]);
    case Op::ConcatCols:
      need_inputs(op, inputs, 2);
      return concat_columns(inputs[0], inputs[1]);
    case Op::Scale: need_inputs(op, inputs, 1); return scale(inputs[0], c0);
    default:
      fail(op_name(op), "not a public op-kind");
  }
}

namespace {

// Records the adjoint graph of `out_id` onto the tape. Returns, for each node
// id existing before the call, the id of its adjoint node (-1 if out does not
// depend on it). Every rule below is expressed through recorded ops, so the
// returned adjoints are themselves differentiable.
std::vector<int> record_adjoints(Tape& t, int out_id) {
  std::vector<int> adj(static_cast<std::size_t>(out_id) + 1, -1);
  auto ten = [&t](int id) { return Ten{&t, id}; };

  // Reduces a full-broadcast-shape gradient back to an operand's shape.
  auto reduce_to = [&](Ten g, Eigen::Index tr, Eigen::Index tc) -> Ten {
    if (g.rows() == tr && g.cols() == tc) return g;
    if (tr == 1 && tc == 1) return sum(g);
    if (tr == 1) return colsum(g);
    return rowsum(g);
  };

  auto accumulate = [&](int id, Ten contrib) {
    if (id > out_id) return;  // node created by an earlier recorded backward? impossible: inputs < node id <= out_id
    if (adj[static_cast<std::size_t>(id)] < 0)
      adj[static_cast<std::size_t>(id)] = contrib.id;
    else
      adj[static_cast<std::size_t>(id)] =
          add(ten(adj[static_cast<std::size_t>(id)]), contrib).id;
  };

  adj[static_cast<std::size_t>(out_id)] = t.leaf(1.0).id;

  for (int i = out_id; i >= 0; --i) {
    int gid = adj[static_cast<std::size_t>(i)];
    if (gid < 0) continue;
    const Tape::Node& n = t.node(i);
    Ten g = ten(gid);
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        const Mat& av = t.value(n.a);
        const Mat& bv = t.value(n.b);
        accumulate(n.a, reduce_to(g, av.rows(), av.cols()));
        accumulate(n.b, reduce_to(g, bv.rows(), bv.cols()));
        break;
      }
      case Op::Sub: {
        const Mat& av = t.value(n.a);
        const Mat& bv = t.value(n.b);
        accumulate(n.a, reduce_to(g, av.rows(), av.cols()));
        accumulate(n.b, reduce_to(neg(g), bv.rows(), bv.cols()));
        break;
      }
      case Op::Mul: {
        const Mat& av = t.value(n.a);
        const Mat& bv = t.value(n.b);
        accumulate(n.a, reduce_to(mul(g, ten(n.b)), av.rows(), av.cols()));
        accumulate(n.b, reduce_to(mul(g, ten(n.a)), bv.rows(), bv.cols()));
        break;
      }
      case Op::Div: {
        const Mat& av = t.value(n.a);
        const Mat& bv = t.value(n.b);
        accumulate(n.a, reduce_to(div(g, ten(n.b)), av.rows(), av.cols()));
        accumulate(n.b, reduce_to(neg(mul(g, div(ten(i), ten(n.b)))),
                                  bv.rows(), bv.cols()));
        break;
      }
      case Op::MatMul:
        accumulate(n.a, matmul_tb(g, ten(n.b)));
        accumulate(n.b, matmul_ta(ten(n.a), g));
        break;
      case Op::MatMulTA:  // z = a^T b
        accumulate(n.a, matmul_tb(ten(n.b), g));
        accumulate(n.b, matmul(ten(n.a), g));
        break;
      case Op::MatMulTB:  // z = a b^T
        accumulate(n.a, matmul(g, ten(n.b)));
        accumulate(n.b, matmul_ta(g, ten(n.a)));
        break;
      case Op::Tanh: {
        Ten one = t.leaf(1.0);
        accumulate(n.a, mul(g, sub(one, square(ten(i)))));
        break;
      }
      case Op::Sigmoid: {
        Ten one = t.leaf(1.0);
        accumulate(n.a, mul(g, mul(ten(i), sub(one, ten(i)))));
        break;
      }
      case Op::Exp:
        accumulate(n.a, mul(g, ten(i)));
        break;
      case Op::Log:
        accumulate(n.a, div(g, ten(n.a)));
        break;
      case Op::Neg:
        accumulate(n.a, neg(g));
        break;
      case Op::Sum: {
        const Mat& av = t.value(n.a);
        accumulate(n.a, mul(t.leaf(Mat::Ones(av.rows(), av.cols())), g));
        break;
      }
      case Op::Mean: {
        const Mat& av = t.value(n.a);
        accumulate(n.a, mul(t.leaf(Mat::Ones(av.rows(), av.cols())),
                            scale(g, 1.0 / static_cast<double>(av.size()))));
        break;
      }
      case Op::Square:
        accumulate(n.a, mul(g, scale(ten(n.a), 2.0)));
        break;
      case Op::Sqrt:
        accumulate(n.a, div(scale(g, 0.5), ten(i)));
        break;
      case Op::Clamp: {
        const Mat& av = t.value(n.a);
        // Identity subgradient at the boundaries.
        Mat mask = ((av.array() >= n.c0) && (av.array() <= n.c1))
                       .cast<double>()
                       .matrix();
        accumulate(n.a, mul(g, t.leaf(std::move(mask))));
        break;
      }
      case Op::MinElem: {
        const Mat& av = t.value(n.a);
        const Mat& bv = t.value(n.b);
        const Mat& zv = t.value(i);
        Mat mask_a(zv.rows(), zv.cols());
        for (Eigen::Index r = 0; r < zv.rows(); ++r) {
          Eigen::Index ra = av.rows() == 1 ? 0 : r;
          Eigen::Index rb = bv.rows() == 1 ? 0 : r;
          for (Eigen::Index c = 0; c < zv.cols(); ++c) {
            double x = av(ra, av.cols() == 1 ? 0 : c);
            double y = bv(rb, bv.cols() == 1 ? 0 : c);
            mask_a(r, c) = x <= y ? 1.0 : 0.0;  // ties go to the first operand
          }
        }
        Mat mask_b = (1.0 - mask_a.array()).matrix();
        accumulate(n.a, reduce_to(mul(g, t.leaf(std::move(mask_a))), av.rows(),
                                  av.cols()));
        accumulate(n.b, reduce_to(mul(g, t.leaf(std::move(mask_b))), bv.rows(),
                                  bv.cols()));
        break;
      }
      case Op::L2NormRows:
        // y_i = sqrt(sum_j x_ij^2 + eps)  =>  dx = x .* (g ./ y) per row
        accumulate(n.a, mul(ten(n.a), div(g, ten(i))));
        break;
      case Op::ConcatCols: {
        Eigen::Index ca = t.value(n.a).cols();
        Eigen::Index cb = t.value(n.b).cols();
        accumulate(n.a, slice_cols(g, 0, ca));
        accumulate(n.b, slice_cols(g, ca, cb));
        break;
      }
      case Op::Scale:
        accumulate(n.a, scale(g, n.c0));
        break;
      case Op::RowSum: {
        const Mat& av = t.value(n.a);
        accumulate(n.a, mul(t.leaf(Mat::Ones(av.rows(), av.cols())), g));
        break;
      }
      case Op::ColSum: {
        const Mat& av = t.value(n.a);
        accumulate(n.a, mul(t.leaf(Mat::Ones(av.rows(), av.cols())), g));
        break;
      }
      case Op::SliceCols: {
        Eigen::Index total = t.value(n.a).cols();
        accumulate(n.a, pad_cols(g, static_cast<Eigen::Index>(n.c0), total));
        break;
      }
      case Op::PadCols:
        accumulate(n.a, slice_cols(g, static_cast<Eigen::Index>(n.c0),
                                   t.value(n.a).cols()));
        break;
    }
  }
  return adj;
}

void check_scalar_output(const Tape& tape, Ten output, const char* op) {
  if (output.tape != &tape || output.id < 0 || output.id >= tape.size())
    fail(op, "output is not on this tape");
  if (tape.value(output.id).size() != 1)
    fail(op, "output must be a scalar, got " +
                 shape_str(tape.value(output.id)));
}

}  // namespace

GradMap backward(Tape& tape, Ten output) {
  check_scalar_output(tape, output, "backward");
  int start = tape.size();
  std::vector<int> adj = record_adjoints(tape, output.id);
  GradMap gm(start);
  for (int id = 0; id <= output.id; ++id) {
    int a = adj[static_cast<std::size_t>(id)];
    if (a >= 0) gm.set(id, tape.value(a));
  }
  tape.truncate(start);
  return gm;
}

Ten input_gradient_as_node(Tape& tape, Ten output, Ten wrt) {
  check_scalar_output(tape, output, "input-gradient");
  if (wrt.tape != &tape || wrt.id < 0 || wrt.id >= tape.size())
    fail("input-gradient", "wrt is not on this tape");
  std::vector<int> adj = record_adjoints(tape, output.id);
  int gid = wrt.id <= output.id ? adj[static_cast<std::size_t>(wrt.id)] : -1;
  if (gid < 0)
    return tape.leaf(Mat::Zero(wrt.rows(), wrt.cols()));
  return Ten{&tape, gid};
}

}  // namespace wdail::ad
