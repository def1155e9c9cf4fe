#include "ebmlab/graph.hpp"

#include <algorithm>
#include <cmath>

namespace ebmlab {

namespace {

constexpr const char* kModule = "tensor-core";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

const char* op_name(int op) {
  static constexpr const char* names[] = {"input", "matmul", "conv2d", "bias_add",
                                          "relu",  "reshape", "logsumexp",
                                          "softmax_cross_entropy", "add", "scale", "sum"};
  return names[op];
}

}  // namespace

double logsumexp(std::span<const double> v) {
  if (v.empty()) fail("logsumexp of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) fail("logsumexp of a non-finite vector");
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    fail("label " + std::to_string(label) + " out of range for " +
         std::to_string(logits.size()) + " classes");
  }
  return logsumexp(logits) - logits[label];
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) p[k] = std::exp(logits[k] - lse);
  return p;
}

// ---------------------------------------------------------------------------
// Construction

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) fail("node id " + std::to_string(id) + " does not exist");
}

std::string Graph::describe(NodeId id) const {
  check_id(id);
  std::string s = "node " + std::to_string(id) + " (" + op_name(static_cast<int>(nodes_[id].op));
  if (!nodes_[id].name.empty()) s += " '" + nodes_[id].name + "'";
  return s + ")";
}

NodeId Graph::append(Node node) {
  for (NodeId a : node.args) {
    check_id(a);
    node.requires_grad = node.requires_grad || nodes_[a].requires_grad;
  }
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return nodes_.size() - 1;
}

NodeId Graph::input(std::string name, Shape shape, bool requires_grad) {
  if (name.empty()) fail("input name must be non-empty");
  for (const auto& n : nodes_) {
    if (n.op == Op::kInput && n.name == name) fail("duplicate input '" + name + "'");
  }
  if (shape.empty() || shape_size(shape) == 0) fail("input '" + name + "' has an empty shape");
  Node n{Op::kInput, {}, std::move(shape)};
  n.name = std::move(name);
  n.requires_grad = requires_grad;
  return append(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId w) {
  check_id(a);
  check_id(w);
  const Shape& sa = nodes_[a].shape;
  const Shape& sw = nodes_[w].shape;
  if (sa.size() != 2 || sw.size() != 2 || sa[1] != sw[0]) {
    fail("matmul shape mismatch: " + shape_to_string(sa) + " x " + shape_to_string(sw) +
         " at node " + std::to_string(nodes_.size()));
  }
  return append({Op::kMatMul, {a, w}, {sa[0], sw[1]}});
}

NodeId Graph::conv2d(NodeId x, NodeId w, Padding padding) {
  check_id(x);
  check_id(w);
  const Shape& sx = nodes_[x].shape;
  const Shape& sw = nodes_[w].shape;
  const std::string where = " at node " + std::to_string(nodes_.size());
  if (sx.size() != 4 || sw.size() != 4) fail("conv2d expects rank-4 input and kernel" + where);
  if (sw[1] != sx[1]) {
    fail("conv2d channel mismatch: input " + shape_to_string(sx) + ", kernel " +
         shape_to_string(sw) + where);
  }
  if (sw[2] != sw[3] || sw[2] % 2 == 0) fail("conv2d kernel must be square and odd" + where);
  const std::size_t k = sw[2];
  std::size_t h = sx[2], wd = sx[3];
  if (padding == Padding::kValid) {
    if (h < k || wd < k) fail("conv2d kernel larger than input" + where);
    h = h - k + 1;
    wd = wd - k + 1;
  }
  Node n{Op::kConv2d, {x, w}, {sx[0], sw[0], h, wd}};
  n.padding = padding;
  return append(std::move(n));
}

NodeId Graph::bias_add(NodeId x, NodeId b) {
  check_id(x);
  check_id(b);
  const Shape& sx = nodes_[x].shape;
  const Shape& sb = nodes_[b].shape;
  if (sx.size() < 2 || sb.size() != 1 || sb[0] != sx[1]) {
    fail("bias_add shape mismatch: " + shape_to_string(sx) + " + " + shape_to_string(sb) +
         " at node " + std::to_string(nodes_.size()));
  }
  return append({Op::kBiasAdd, {x, b}, sx});
}

NodeId Graph::relu(NodeId x) {
  check_id(x);
  return append({Op::kRelu, {x}, nodes_[x].shape});
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  check_id(x);
  if (shape_size(shape) != shape_size(nodes_[x].shape)) {
    fail("reshape " + shape_to_string(nodes_[x].shape) + " -> " + shape_to_string(shape) +
         " changes the element count");
  }
  return append({Op::kReshape, {x}, std::move(shape)});
}

NodeId Graph::logsumexp(NodeId x) {
  check_id(x);
  const Shape& sx = nodes_[x].shape;
  if (sx.size() != 2) fail("logsumexp expects [N,K], got " + shape_to_string(sx));
  return append({Op::kLogSumExp, {x}, {sx[0]}});
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
  check_id(logits);
  const Shape& sx = nodes_[logits].shape;
  if (sx.size() != 2) fail("softmax_cross_entropy expects [N,K], got " + shape_to_string(sx));
  if (labels.size() != sx[0]) fail("softmax_cross_entropy: label count differs from batch size");
  for (auto y : labels) {
    if (y >= sx[1]) {
      fail("label " + std::to_string(y) + " out of range for " + std::to_string(sx[1]) +
           " classes");
    }
  }
  Node n{Op::kSoftmaxCrossEntropy, {logits}, {sx[0]}};
  n.labels = std::move(labels);
  return append(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  if (nodes_[a].shape != nodes_[b].shape) {
    fail("add shape mismatch: " + shape_to_string(nodes_[a].shape) + " + " +
         shape_to_string(nodes_[b].shape));
  }
  return append({Op::kAdd, {a, b}, nodes_[a].shape});
}

NodeId Graph::scale(NodeId a, double factor) {
  check_id(a);
  if (!std::isfinite(factor)) fail("scale factor must be finite");
  Node n{Op::kScale, {a}, nodes_[a].shape};
  n.factor = factor;
  return append(std::move(n));
}

NodeId Graph::sum(NodeId a) {
  check_id(a);
  return append({Op::kSum, {a}, {1}});
}

void Graph::set_output(NodeId id) {
  check_id(id);
  output_ = id;
}

NodeId Graph::output() const {
  if (output_ >= nodes_.size()) fail("graph has no designated output");
  return output_;
}

const Shape& Graph::shape(NodeId id) const {
  check_id(id);
  return nodes_[id].shape;
}

NodeId Graph::find_input(std::string_view name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kInput && nodes_[i].name == name) return i;
  }
  fail("no input named '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Forward

const Tensor& Graph::value(NodeId id) const {
  check_id(id);
  if (!evaluated_) fail("value requested before evaluate");
  return nodes_[id].op == Op::kInput ? *bound_[id] : values_[id];
}

const Tensor& Graph::evaluate(const Bindings& bindings) {
  const NodeId out = output();
  values_.resize(nodes_.size());
  bound_.assign(nodes_.size(), nullptr);
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op != Op::kInput) continue;
    auto it = bindings.find(n.name);
    if (it == bindings.end() || it->second == nullptr) fail("input '" + n.name + "' is not bound");
    if (it->second->shape() != n.shape) {
      fail("input '" + n.name + "' expects shape " + shape_to_string(n.shape) + ", got " +
           shape_to_string(it->second->shape()));
    }
    bound_[i] = it->second;
  }
  evaluated_ = true;
  differentiated_ = false;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kInput) continue;
    forward_node(i);
    if (!values_[i].all_finite()) {
      evaluated_ = false;
      fail("non-finite value produced at " + describe(i));
    }
  }
  return value(out);
}

void Graph::forward_node(NodeId id) {
  const Node& n = nodes_[id];
  Tensor& out = values_[id];
  if (out.shape() != n.shape) {
    out = Tensor(n.shape);
  } else {
    std::fill(out.values().begin(), out.values().end(), 0.0);
  }
  double* y = out.values().data();
  auto arg = [&](std::size_t k) -> const Tensor& { return value(n.args[k]); };

  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kMatMul: {
      const Tensor& a = arg(0);
      const Tensor& w = arg(1);
      const std::size_t rows = a.dim(0), inner = a.dim(1), cols = w.dim(1);
      const double* pa = a.values().data();
      const double* pw = w.values().data();
      for (std::size_t r = 0; r < rows; ++r) {
        double* yr = y + r * cols;
        for (std::size_t i = 0; i < inner; ++i) {
          const double ai = pa[r * inner + i];
          if (ai == 0.0) continue;
          const double* wi = pw + i * cols;
          for (std::size_t j = 0; j < cols; ++j) yr[j] += ai * wi[j];
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = arg(0);
      const Tensor& w = arg(1);
      const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t cout = w.dim(0), k = w.dim(2);
      const std::size_t oh = n.shape[2], ow = n.shape[3];
      const long pad = n.padding == Padding::kSame ? static_cast<long>(k / 2) : 0;
      const double* px = x.values().data();
      const double* pw = w.values().data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
          double* yo = y + (b * cout + o) * oh * ow;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* xc = px + (b * cin + c) * h * wd;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const double wv = pw[((o * cin + c) * k + ky) * k + kx];
                const long dx = static_cast<long>(kx) - pad;
                const long ox0 = std::max(0L, -dx);
                const long ox1 = std::min(static_cast<long>(ow), static_cast<long>(wd) - dx);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long iy = static_cast<long>(oy + ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  const double* xr = xc + iy * static_cast<long>(wd) + dx;
                  double* yr = yo + oy * ow;
                  for (long ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[ox];
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kBiasAdd: {
      const Tensor& x = arg(0);
      const Tensor& b = arg(1);
      const std::size_t batch = x.dim(0), channels = x.dim(1);
      const std::size_t inner = x.size() / (batch * channels);
      const double* px = x.values().data();
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (r * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) y[base + i] = px[base + i] + b[c];
        }
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& x = arg(0);
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    }
    case Op::kReshape: {
      const Tensor& x = arg(0);
      std::copy(x.values().begin(), x.values().end(), y);
      break;
    }
    case Op::kLogSumExp:
    case Op::kSoftmaxCrossEntropy: {
      const Tensor& x = arg(0);
      const std::size_t rows = x.dim(0), classes = x.dim(1);
      for (std::size_t r = 0; r < rows; ++r) {
        std::span<const double> row(x.values().data() + r * classes, classes);
        y[r] = n.op == Op::kLogSumExp ? ebmlab::logsumexp(row)
                                      : ebmlab::softmax_cross_entropy(row, n.labels[r]);
      }
      break;
    }
    case Op::kAdd: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
      break;
    }
    case Op::kScale: {
      const Tensor& a = arg(0);
      for (std::size_t i = 0; i < a.size(); ++i) y[i] = n.factor * a[i];
      break;
    }
    case Op::kSum: {
      const Tensor& a = arg(0);
      double s = 0.0;
      for (double v : a.values()) s += v;
      y[0] = s;
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Backward

void Graph::backward(const Tensor& seed) {
  if (!evaluated_) fail("backward called before evaluate");
  const NodeId out = output();
  if (seed.shape() != nodes_[out].shape) {
    fail("seed gradient shape " + shape_to_string(seed.shape()) + " does not match output " +
         shape_to_string(nodes_[out].shape));
  }
  grads_.resize(nodes_.size());
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad) {
      grads_[i].assign(shape_size(nodes_[i].shape), 0.0);
    } else {
      grads_[i].clear();
    }
  }
  if (nodes_[out].requires_grad) {
    std::copy(seed.values().begin(), seed.values().end(), grads_[out].begin());
  }
  for (NodeId i = out + 1; i-- > 0;) {
    if (!nodes_[i].requires_grad || nodes_[i].op == Op::kInput) continue;
    backward_node(i);
  }
  differentiated_ = true;
}

void Graph::backward_node(NodeId id) {
  const Node& n = nodes_[id];
  const std::vector<double>& g = grads_[id];
  auto arg = [&](std::size_t k) -> const Tensor& { return value(n.args[k]); };
  auto wants = [&](std::size_t k) { return nodes_[n.args[k]].requires_grad; };
  auto gin = [&](std::size_t k) -> double* { return grads_[n.args[k]].data(); };

  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kMatMul: {
      const Tensor& a = arg(0);
      const Tensor& w = arg(1);
      const std::size_t rows = a.dim(0), inner = a.dim(1), cols = w.dim(1);
      const double* pa = a.values().data();
      const double* pw = w.values().data();
      if (wants(0)) {
        double* ga = gin(0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * cols;
          for (std::size_t i = 0; i < inner; ++i) {
            const double* wi = pw + i * cols;
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += gr[j] * wi[j];
            ga[r * inner + i] += s;
          }
        }
      }
      if (wants(1)) {
        double* gw = gin(1);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * cols;
          for (std::size_t i = 0; i < inner; ++i) {
            const double ai = pa[r * inner + i];
            if (ai == 0.0) continue;
            double* gwi = gw + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gwi[j] += ai * gr[j];
          }
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = arg(0);
      const Tensor& w = arg(1);
      const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t cout = w.dim(0), k = w.dim(2);
      const std::size_t oh = n.shape[2], ow = n.shape[3];
      const long pad = n.padding == Padding::kSame ? static_cast<long>(k / 2) : 0;
      const double* px = x.values().data();
      const double* pw = w.values().data();
      const bool want_x = wants(0), want_w = wants(1);
      double* gx = want_x ? gin(0) : nullptr;
      double* gw = want_w ? gin(1) : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
          const double* go = g.data() + (b * cout + o) * oh * ow;
          for (std::size_t c = 0; c < cin; ++c) {
            const std::size_t xoff = (b * cin + c) * h * wd;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((o * cin + c) * k + ky) * k + kx;
                const double wv = pw[widx];
                const long dx = static_cast<long>(kx) - pad;
                const long ox0 = std::max(0L, -dx);
                const long ox1 = std::min(static_cast<long>(ow), static_cast<long>(wd) - dx);
                double acc = 0.0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long iy = static_cast<long>(oy + ky) - pad;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  const long rowoff = static_cast<long>(xoff) + iy * static_cast<long>(wd) + dx;
                  const double* gr = go + oy * ow;
                  if (want_x) {
                    double* gxr = gx + rowoff;
                    for (long ox = ox0; ox < ox1; ++ox) gxr[ox] += wv * gr[ox];
                  }
                  if (want_w) {
                    const double* xr = px + rowoff;
                    for (long ox = ox0; ox < ox1; ++ox) acc += xr[ox] * gr[ox];
                  }
                }
                if (want_w) gw[widx] += acc;
              }
            }
          }
        }
      }
      break;
    }
    case Op::kBiasAdd: {
      const Tensor& x = arg(0);
      const std::size_t batch = x.dim(0), channels = x.dim(1);
      const std::size_t inner = x.size() / (batch * channels);
      if (wants(0)) {
        double* gx = gin(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (wants(1)) {
        double* gb = gin(1);
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (r * channels + c) * inner;
            double s = 0.0;
            for (std::size_t i = 0; i < inner; ++i) s += g[base + i];
            gb[c] += s;
          }
        }
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& x = arg(0);
      double* gx = gin(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) gx[i] += g[i];
      }
      break;
    }
    case Op::kReshape: {
      double* gx = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      break;
    }
    case Op::kLogSumExp:
    case Op::kSoftmaxCrossEntropy: {
      const Tensor& x = arg(0);
      const std::size_t rows = x.dim(0), classes = x.dim(1);
      double* gx = gin(0);
      for (std::size_t r = 0; r < rows; ++r) {
        std::span<const double> row(x.values().data() + r * classes, classes);
        const double lse = ebmlab::logsumexp(row);
        for (std::size_t k = 0; k < classes; ++k) {
          gx[r * classes + k] += g[r] * std::exp(row[k] - lse);
        }
        if (n.op == Op::kSoftmaxCrossEntropy) gx[r * classes + n.labels[r]] -= g[r];
      }
      break;
    }
    case Op::kAdd: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        double* ga = gin(k);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      break;
    }
    case Op::kScale: {
      double* ga = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.factor * g[i];
      break;
    }
    case Op::kSum: {
      double* ga = gin(0);
      const std::size_t len = shape_size(nodes_[n.args[0]].shape);
      for (std::size_t i = 0; i < len; ++i) ga[i] += g[0];
      break;
    }
  }
}

std::span<const double> Graph::gradient(std::string_view input_name) const {
  const NodeId id = find_input(input_name);
  if (!differentiated_) fail("gradient requested before backward");
  if (!nodes_[id].requires_grad) {
    fail("input '" + std::string(input_name) + "' was declared without requires_grad");
  }
  return grads_[id];
}

}  // namespace ebmlab
