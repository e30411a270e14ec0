#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace dva {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Square,
  Ln,
  Exp,
  Tanh,
  Sin,
  Matvec,
  Sum,
  Mean,
};

struct Node {
  Op op;
  bool needs_grad;
  NodeId a;
  NodeId b;
  std::uint32_t len;   // number of elements
  std::uint32_t cols;  // >1 only for matrix-shaped values
  std::size_t off;     // offset into the value slab
};

// Define-by-run reverse-mode tape. Values are computed eagerly when a node is
// emitted, into one contiguous slab, so a reverse scan over the node list is
// all backward() has to do. reset() keeps slab capacity, the intended use is
// one tape reused across minibatches.
//
// Elementwise binary ops broadcast a single-element operand against a vector.
// ln of a non-positive value, division by zero and exp of an argument large
// enough to overflow all throw std::domain_error instead of emitting NaN/inf.
class Tape {
 public:
  NodeId leaf(double v, bool needs_grad = false) {
    NodeId id = push(Op::Leaf, 0, 0, 1, 1, needs_grad);
    vals_[nodes_[id].off] = v;
    return id;
  }

  NodeId leaf(std::span<const double> v, bool needs_grad = false, std::uint32_t cols = 1) {
    if (v.empty()) throw std::invalid_argument("tape: empty leaf");
    if (cols == 0 || v.size() % cols != 0) throw std::invalid_argument("tape: leaf shape mismatch");
    NodeId id = push(Op::Leaf, 0, 0, static_cast<std::uint32_t>(v.size()), cols, needs_grad);
    double* p = vals_.data() + nodes_[id].off;
    for (std::size_t i = 0; i < v.size(); ++i) p[i] = v[i];
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }

  NodeId neg(NodeId a) { return unary(Op::Neg, a); }
  NodeId square(NodeId a) { return unary(Op::Square, a); }
  NodeId ln(NodeId a) { return unary(Op::Ln, a); }
  NodeId exp(NodeId a) { return unary(Op::Exp, a); }
  NodeId tanh(NodeId a) { return unary(Op::Tanh, a); }
  NodeId sin(NodeId a) { return unary(Op::Sin, a); }

  NodeId matvec(NodeId m, NodeId v) {
    // push() may grow nodes_, so no Node reference taken before it survives.
    const std::uint32_t c = nodes_[v].len;
    if (nodes_[v].cols != 1 || nodes_[m].cols != c || nodes_[m].len % c != 0)
      throw std::invalid_argument("tape: matvec shape mismatch");
    const std::uint32_t r = nodes_[m].len / c;
    NodeId id = push(Op::Matvec, m, v, r, 1, nodes_[m].needs_grad || nodes_[v].needs_grad);
    const double* pm = vals_.data() + nodes_[m].off;
    const double* pv = vals_.data() + nodes_[v].off;
    double* po = vals_.data() + nodes_[id].off;
    for (std::uint32_t i = 0; i < r; ++i) {
      double acc = 0.0;
      const double* row = pm + std::size_t(i) * c;
      for (std::uint32_t j = 0; j < c; ++j) acc += row[j] * pv[j];
      po[i] = acc;
    }
    return id;
  }

  NodeId sum(NodeId a) { return reduce(Op::Sum, a); }
  NodeId mean(NodeId a) { return reduce(Op::Mean, a); }

  double value(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.len != 1) throw std::invalid_argument("tape: value() needs a scalar node");
    return vals_[n.off];
  }

  std::span<const double> value_span(NodeId id) const {
    const Node& n = nodes_[id];
    return {vals_.data() + n.off, n.len};
  }

  // Reverse scan from a scalar root. Nodes with no differentiable ancestor
  // are skipped, as are accumulations into operands that need no gradient.
  void backward(NodeId root) {
    const Node& out = nodes_[root];
    if (out.len != 1) throw std::invalid_argument("tape: backward needs a scalar root");
    adj_.assign(vals_.size(), 0.0);
    if (!out.needs_grad) return;
    adj_[out.off] = 1.0;
    for (std::size_t k = nodes_.size(); k-- > 0;) {
      const Node& n = nodes_[k];
      if (!n.needs_grad || n.op == Op::Leaf) continue;
      const double* g = adj_.data() + n.off;
      const Node& na = nodes_[n.a];
      const double* va = vals_.data() + na.off;
      double* aa = adj_.data() + na.off;
      const bool ga = na.needs_grad;
      switch (n.op) {
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
          const Node& nb = nodes_[n.b];
          const double* vb = vals_.data() + nb.off;
          double* ab = adj_.data() + nb.off;
          const bool gb = nb.needs_grad;
          const std::uint32_t sa = na.len == 1 ? 0 : 1;
          const std::uint32_t sb = nb.len == 1 ? 0 : 1;
          const double* vo = vals_.data() + n.off;
          for (std::uint32_t i = 0; i < n.len; ++i) {
            const double gi = g[i];
            switch (n.op) {
              case Op::Add:
                if (ga) aa[i * sa] += gi;
                if (gb) ab[i * sb] += gi;
                break;
              case Op::Sub:
                if (ga) aa[i * sa] += gi;
                if (gb) ab[i * sb] -= gi;
                break;
              case Op::Mul:
                if (ga) aa[i * sa] += gi * vb[i * sb];
                if (gb) ab[i * sb] += gi * va[i * sa];
                break;
              default:  // Div
                if (ga) aa[i * sa] += gi / vb[i * sb];
                if (gb) ab[i * sb] -= gi * vo[i] / vb[i * sb];
                break;
            }
          }
          break;
        }
        case Op::Neg:
          if (ga)
            for (std::uint32_t i = 0; i < n.len; ++i) aa[i] -= g[i];
          break;
        case Op::Square:
          if (ga)
            for (std::uint32_t i = 0; i < n.len; ++i) aa[i] += 2.0 * va[i] * g[i];
          break;
        case Op::Ln:
          if (ga)
            for (std::uint32_t i = 0; i < n.len; ++i) aa[i] += g[i] / va[i];
          break;
        case Op::Exp: {
          const double* vo = vals_.data() + n.off;
          if (ga)
            for (std::uint32_t i = 0; i < n.len; ++i) aa[i] += g[i] * vo[i];
          break;
        }
        case Op::Tanh: {
          const double* vo = vals_.data() + n.off;
          if (ga)
            for (std::uint32_t i = 0; i < n.len; ++i) aa[i] += g[i] * (1.0 - vo[i] * vo[i]);
          break;
        }
        case Op::Sin:
          if (ga)
            for (std::uint32_t i = 0; i < n.len; ++i) aa[i] += g[i] * std::cos(va[i]);
          break;
        case Op::Matvec: {
          const Node& nb = nodes_[n.b];
          const double* vb = vals_.data() + nb.off;
          double* ab = adj_.data() + nb.off;
          const bool gb = nb.needs_grad;
          const std::uint32_t c = nb.len;
          for (std::uint32_t i = 0; i < n.len; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double* row = va + std::size_t(i) * c;
            double* arow = aa + std::size_t(i) * c;
            for (std::uint32_t j = 0; j < c; ++j) {
              if (ga) arow[j] += gi * vb[j];
              if (gb) ab[j] += gi * row[j];
            }
          }
          break;
        }
        case Op::Sum:
          if (ga)
            for (std::uint32_t i = 0; i < na.len; ++i) aa[i] += g[0];
          break;
        case Op::Mean:
          if (ga) {
            const double gi = g[0] / na.len;
            for (std::uint32_t i = 0; i < na.len; ++i) aa[i] += gi;
          }
          break;
        default:
          break;
      }
    }
  }

  double grad(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.len != 1) throw std::invalid_argument("tape: grad() needs a scalar node");
    return adj_[n.off];
  }

  std::span<const double> grad_span(NodeId id) const {
    const Node& n = nodes_[id];
    return {adj_.data() + n.off, n.len};
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t slab_size() const { return vals_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }

  std::size_t fan_out(NodeId id) const {
    std::size_t n = 0;
    for (const Node& nd : nodes_) {
      if (nd.op == Op::Leaf) continue;
      if (nd.a == id) ++n;
      const bool has_b = nd.op == Op::Add || nd.op == Op::Sub || nd.op == Op::Mul ||
                         nd.op == Op::Div || nd.op == Op::Matvec;
      if (has_b && nd.b == id) ++n;
    }
    return n;
  }

  void reset() {
    nodes_.clear();
    vals_.clear();
  }

 private:
  NodeId push(Op op, NodeId a, NodeId b, std::uint32_t len, std::uint32_t cols, bool ng) {
    Node n{op, ng, a, b, len, cols, vals_.size()};
    vals_.resize(vals_.size() + len);
    nodes_.push_back(n);
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const Node& na = nodes_[a];
    const Node& nb = nodes_[b];
    std::uint32_t len, cols;
    if (na.len == nb.len) {
      len = na.len;
      cols = na.cols;
    } else if (na.len == 1) {
      len = nb.len;
      cols = nb.cols;
    } else if (nb.len == 1) {
      len = na.len;
      cols = na.cols;
    } else {
      throw std::invalid_argument("tape: elementwise shape mismatch");
    }
    NodeId id = push(op, a, b, len, cols, na.needs_grad || nb.needs_grad);
    const double* pa = vals_.data() + nodes_[a].off;
    const double* pb = vals_.data() + nodes_[b].off;
    double* po = vals_.data() + nodes_[id].off;
    const std::uint32_t sa = nodes_[a].len == 1 ? 0 : 1;
    const std::uint32_t sb = nodes_[b].len == 1 ? 0 : 1;
    switch (op) {
      case Op::Add:
        for (std::uint32_t i = 0; i < len; ++i) po[i] = pa[i * sa] + pb[i * sb];
        break;
      case Op::Sub:
        for (std::uint32_t i = 0; i < len; ++i) po[i] = pa[i * sa] - pb[i * sb];
        break;
      case Op::Mul:
        for (std::uint32_t i = 0; i < len; ++i) po[i] = pa[i * sa] * pb[i * sb];
        break;
      default:  // Div
        for (std::uint32_t i = 0; i < len; ++i) {
          if (pb[i * sb] == 0.0) throw std::domain_error("tape: division by zero");
          po[i] = pa[i * sa] / pb[i * sb];
        }
        break;
    }
    return id;
  }

  NodeId unary(Op op, NodeId a) {
    const Node& na = nodes_[a];
    NodeId id = push(op, a, 0, na.len, na.cols, na.needs_grad);
    const double* pa = vals_.data() + nodes_[a].off;
    double* po = vals_.data() + nodes_[id].off;
    const std::uint32_t len = nodes_[id].len;
    switch (op) {
      case Op::Neg:
        for (std::uint32_t i = 0; i < len; ++i) po[i] = -pa[i];
        break;
      case Op::Square:
        for (std::uint32_t i = 0; i < len; ++i) po[i] = pa[i] * pa[i];
        break;
      case Op::Ln:
        for (std::uint32_t i = 0; i < len; ++i) {
          if (pa[i] <= 0.0) throw std::domain_error("tape: ln of non-positive value");
          po[i] = std::log(pa[i]);
        }
        break;
      case Op::Exp:
        for (std::uint32_t i = 0; i < len; ++i) {
          if (pa[i] > 709.0) throw std::domain_error("tape: exp overflow");
          po[i] = std::exp(pa[i]);
        }
        break;
      case Op::Tanh:
        for (std::uint32_t i = 0; i < len; ++i) po[i] = std::tanh(pa[i]);
        break;
      default:  // Sin
        for (std::uint32_t i = 0; i < len; ++i) po[i] = std::sin(pa[i]);
        break;
    }
    return id;
  }

  NodeId reduce(Op op, NodeId a) {
    const Node& na = nodes_[a];
    NodeId id = push(op, a, 0, 1, 1, na.needs_grad);
    const double* pa = vals_.data() + nodes_[a].off;
    const std::uint32_t len = nodes_[a].len;
    double acc = 0.0;
    for (std::uint32_t i = 0; i < len; ++i) acc += pa[i];
    vals_[nodes_[id].off] = op == Op::Mean ? acc / len : acc;
    return id;
  }

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> adj_;
};

// Thin operator-overload wrapper so loss expressions read like the math.
class Val {
 public:
  Val() : t_(nullptr), id_(0) {}
  Val(Tape& t, NodeId id) : t_(&t), id_(id) {}

  Tape& tape() const { return *t_; }
  NodeId id() const { return id_; }
  double value() const { return t_->value(id_); }

 private:
  Tape* t_;
  NodeId id_;
};

inline Val operator+(Val a, Val b) { return {a.tape(), a.tape().add(a.id(), b.id())}; }
inline Val operator-(Val a, Val b) { return {a.tape(), a.tape().sub(a.id(), b.id())}; }
inline Val operator*(Val a, Val b) { return {a.tape(), a.tape().mul(a.id(), b.id())}; }
inline Val operator/(Val a, Val b) { return {a.tape(), a.tape().div(a.id(), b.id())}; }

inline Val operator+(Val a, double c) { return a + Val(a.tape(), a.tape().leaf(c)); }
inline Val operator-(Val a, double c) { return a - Val(a.tape(), a.tape().leaf(c)); }
inline Val operator*(Val a, double c) { return a * Val(a.tape(), a.tape().leaf(c)); }
inline Val operator/(Val a, double c) { return a / Val(a.tape(), a.tape().leaf(c)); }
inline Val operator+(double c, Val a) { return Val(a.tape(), a.tape().leaf(c)) + a; }
inline Val operator-(double c, Val a) { return Val(a.tape(), a.tape().leaf(c)) - a; }
inline Val operator*(double c, Val a) { return Val(a.tape(), a.tape().leaf(c)) * a; }
inline Val operator/(double c, Val a) { return Val(a.tape(), a.tape().leaf(c)) / a; }

inline Val operator-(Val a) { return {a.tape(), a.tape().neg(a.id())}; }
inline Val square(Val a) { return {a.tape(), a.tape().square(a.id())}; }
inline Val ln(Val a) { return {a.tape(), a.tape().ln(a.id())}; }
inline Val exp(Val a) { return {a.tape(), a.tape().exp(a.id())}; }
inline Val tanh(Val a) { return {a.tape(), a.tape().tanh(a.id())}; }
inline Val sin(Val a) { return {a.tape(), a.tape().sin(a.id())}; }
inline Val vsum(Val a) { return {a.tape(), a.tape().sum(a.id())}; }
inline Val vmean(Val a) { return {a.tape(), a.tape().mean(a.id())}; }
inline Val matvec(Val m, Val v) { return {m.tape(), m.tape().matvec(m.id(), v.id())}; }

}  // namespace dva
