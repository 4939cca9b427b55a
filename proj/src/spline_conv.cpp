#include "evgraph/spline_conv.hpp"

#include <algorithm>
#include <cmath>

#include "evgraph/errors.hpp"

namespace evg::nn {

Basis1D bspline_basis(double u, int degree, int kernel_size) {
  if (kernel_size < 1) throw RangeError("kernel size must be >= 1");
  Basis1D b;
  if (std::isnan(u) || u < 0.0 || u > 1.0) {
    b.clamped = true;
    u = std::isnan(u) ? 0.0 : std::clamp(u, 0.0, 1.0);
  }
  if (kernel_size == 1) {
    b.count = 1;
    b.index[0] = 0;
    b.weight[0] = 1.0;
    return b;
  }
  if (degree < 1 || degree > 3) throw RangeError("B-spline degree must be 1, 2 or 3");
  if (kernel_size < degree + 1) {
    throw RangeError("kernel size " + std::to_string(kernel_size) + " too small for degree " + std::to_string(degree));
  }
  const int segments = kernel_size - degree;
  const double v = u * segments;
  const int i0 = std::min(static_cast<int>(std::floor(v)), segments - 1);
  const double f = v - i0;
  b.count = degree + 1;
  for (int j = 0; j <= degree; ++j) b.index[j] = i0 + j;
  switch (degree) {
    case 1:
      b.weight[0] = 1.0 - f;
      b.weight[1] = f;
      break;
    case 2:
      b.weight[0] = 0.5 * (1.0 - f) * (1.0 - f);
      b.weight[1] = 0.5 + f * (1.0 - f);
      b.weight[2] = 0.5 * f * f;
      break;
    default: {
      const double f2 = f * f;
      const double f3 = f2 * f;
      b.weight[0] = (1.0 - f) * (1.0 - f) * (1.0 - f) / 6.0;
      b.weight[1] = (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0;
      b.weight[2] = (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0;
      b.weight[3] = f3 / 6.0;
      break;
    }
  }
  return b;
}

EdgeBasis compute_edge_basis(std::span<const Pseudo> pseudo, int degree, KernelSize kernel) {
  EdgeBasis eb;
  const int cx = kernel.kx == 1 ? 1 : degree + 1;
  const int cy = kernel.ky == 1 ? 1 : degree + 1;
  eb.per_edge = cx * cy;
  eb.index.resize(pseudo.size() * eb.per_edge);
  eb.weight.resize(pseudo.size() * eb.per_edge);
  for (std::size_t e = 0; e < pseudo.size(); ++e) {
    const auto bx = bspline_basis(pseudo[e][0], degree, kernel.kx);
    const auto by = bspline_basis(pseudo[e][1], degree, kernel.ky);
    eb.clamped += static_cast<std::size_t>(bx.clamped) + static_cast<std::size_t>(by.clamped);
    std::size_t k = e * eb.per_edge;
    for (int jy = 0; jy < by.count; ++jy) {
      for (int jx = 0; jx < bx.count; ++jx, ++k) {
        eb.index[k] = static_cast<std::uint32_t>(bx.index[jx] + kernel.kx * by.index[jy]);
        eb.weight[k] = bx.weight[jx] * by.weight[jy];
      }
    }
  }
  return eb;
}

ConvGraph make_conv_graph(std::size_t num_nodes, std::span<const Edge> edges, std::span<const Pseudo> pseudo,
                          int degree, KernelSize kernel) {
  if (edges.size() != pseudo.size()) throw ShapeError("edge and pseudo-coordinate counts differ");
  ConvGraph g;
  g.num_nodes = num_nodes;
  g.edges.assign(edges.begin(), edges.end());
  g.kernel = kernel;
  g.basis = compute_edge_basis(pseudo, degree, kernel);
  g.inv_in_degree.assign(num_nodes, 0.0);
  for (const auto& e : edges) {
    if (e.src >= num_nodes || e.dst >= num_nodes) throw ShapeError("edge endpoint out of range");
    g.inv_in_degree[e.dst] += 1.0;
  }
  for (auto& d : g.inv_in_degree) d = d > 0.0 ? 1.0 / d : 0.0;
  return g;
}

ad::Var spline_conv(ad::Var x, ad::Var weight, ad::Var bias, const ConvGraph& graph) {
  return spline_conv(x, weight, bias, std::make_shared<const ConvGraph>(graph));
}

ad::Var spline_conv(ad::Var x, ad::Var weight, ad::Var bias, std::shared_ptr<const ConvGraph> shared) {
  const ConvGraph& graph = *shared;
  const auto& vx = x.value();
  const auto& vw = weight.value();
  const auto& vb = bias.value();
  const std::size_t k = static_cast<std::size_t>(graph.kernel.count());
  if (vx.rank() != 2 || vx.dim(0) != graph.num_nodes || vw.rank() != 3 || vw.dim(0) != k ||
      vw.dim(1) != vx.dim(1) || vb.rank() != 1 || vb.dim(0) != vw.dim(2)) {
    throw ShapeError("spline_conv: features " + ad::shape_string(vx.shape()) + ", weight " +
                     ad::shape_string(vw.shape()) + ", bias " + ad::shape_string(vb.shape()) + " on " +
                     std::to_string(graph.num_nodes) + " nodes with kernel " + std::to_string(k));
  }
  const std::size_t n = graph.num_nodes;
  const std::size_t c_in = vx.dim(1);
  const std::size_t c_out = vw.dim(2);
  const std::size_t zw = k * c_in;
  const int per_edge = graph.basis.per_edge;

  // Z[i, p*Cin + l] = 1/|N(i)| sum_{j->i} B_p(u) x[j, l]; then out = Z W + b.
  auto z = std::make_shared<std::vector<double>>(n * zw, 0.0);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto [src, dst] = graph.edges[e];
    const double norm = graph.inv_in_degree[dst];
    const double* xs = vx.ptr() + src * c_in;
    double* zr = z->data() + dst * zw;
    for (int q = 0; q < per_edge; ++q) {
      const double w = graph.basis.weight[e * per_edge + q] * norm;
      if (w == 0.0) continue;
      double* zp = zr + graph.basis.index[e * per_edge + q] * c_in;
      for (std::size_t l = 0; l < c_in; ++l) zp[l] += w * xs[l];
    }
  }
  ad::Tensor out({n, c_out});
  ad::gemm(z->data(), n, zw, false, vw.ptr(), zw, c_out, false, out.ptr(), false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < c_out; ++c) out[i * c_out + c] += vb[c];
  }

  const int ix = x.id();
  const int iw = weight.id();
  const int ib = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias},
                         [ix, iw, ib, z, shared, n, c_in, c_out, zw, per_edge](ad::Tape& t, int self) {
                           const ConvGraph& graph = *shared;
                           const ad::Tensor& g = t.grad(self);
                           if (t.requires_grad(iw)) {
                             ad::gemm(z->data(), n, zw, true, g.ptr(), n, c_out, false, t.grad(iw).ptr(), true);
                           }
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad(ib);
                             for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t c = 0; c < c_out; ++c) gb[c] += g[i * c_out + c];
                             }
                           }
                           if (t.requires_grad(ix)) {
                             std::vector<double> dz(n * zw);
                             ad::gemm(g.ptr(), n, c_out, false, t.value(iw).ptr(), zw, c_out, true, dz.data(), false);
                             auto& gx = t.grad(ix);
                             for (std::size_t e = 0; e < graph.edges.size(); ++e) {
                               const auto [src, dst] = graph.edges[e];
                               const double norm = graph.inv_in_degree[dst];
                               double* gxs = gx.ptr() + src * c_in;
                               const double* dzr = dz.data() + dst * zw;
                               for (int q = 0; q < per_edge; ++q) {
                                 const double w = graph.basis.weight[e * per_edge + q] * norm;
                                 if (w == 0.0) continue;
                                 const double* dzp = dzr + graph.basis.index[e * per_edge + q] * c_in;
                                 for (std::size_t l = 0; l < c_in; ++l) gxs[l] += w * dzp[l];
                               }
                             }
                           }
                         });
}

double spline_init_bound(int c_in, int c_out, int degree, KernelSize kernel) {
  const int cx = kernel.kx == 1 ? 1 : degree + 1;
  const int cy = kernel.ky == 1 ? 1 : degree + 1;
  return std::sqrt(6.0 / (static_cast<double>(c_in) * cx * cy + c_out));
}

SplineConv::SplineConv(std::string name, int c_in, int c_out, KernelSize kernel, int degree, Rng& rng)
    : c_in_(c_in), c_out_(c_out), kernel_(kernel), degree_(degree) {
  if (c_in < 1 || c_out < 1) throw ShapeError("spline conv " + name + ": channel counts must be positive");
  if (kernel.kx < 1 || kernel.ky < 1) throw ShapeError("spline conv " + name + ": kernel size must be positive");
  ad::Tensor w({static_cast<std::size_t>(kernel.count()), static_cast<std::size_t>(c_in), static_cast<std::size_t>(c_out)});
  const double bound = spline_init_bound(c_in, c_out, degree, kernel);
  for (auto& v : w.data()) v = uniform(rng, -bound, bound);
  weight_ = ad::Parameter(name + ".weight", std::move(w));
  bias_ = ad::Parameter(name + ".bias", ad::Tensor({static_cast<std::size_t>(c_out)}));
}

ad::Var SplineConv::forward(ad::Tape& tape, ad::Var x, std::shared_ptr<const ConvGraph> graph) {
  if (graph->kernel != kernel_) throw ShapeError("spline conv " + weight_.name + ": graph prepared for another kernel size");
  return spline_conv(x, tape.parameter(weight_), tape.parameter(bias_), std::move(graph));
}

}  // namespace evg::nn
