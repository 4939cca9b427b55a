#include "evgraph/network.hpp"

#include <fstream>
#include <map>

#include "evgraph/binary_io.hpp"
#include "evgraph/errors.hpp"
#include "evgraph/pooling.hpp"
#include "evgraph/random.hpp"

namespace evg {

// --- checkpoint container -----------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[9] = "EVGCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out.write(kCheckpointMagic, 8);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_string(out, ckpt.model_config);
  io::write_string(out, ckpt.run_config);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    io::write_string(out, name);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::write_le<std::uint64_t>(out, d);
    for (double v : t.data()) io::write_le(out, v);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, kCheckpointMagic);
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.model_config = io::read_string(in);
  ckpt.run_config = io::read_string(in);
  const auto count = io::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = io::read_string(in, 4096);
    const auto rank = io::read_le<std::uint32_t>(in);
    if (rank > 8) throw ParseError("checkpoint tensor " + name + " has rank " + std::to_string(rank));
    ad::Tensor::Shape shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint64_t>(in);
    if (ad::element_count(shape) > (1ULL << 31)) throw ParseError("checkpoint tensor " + name + " too large");
    std::vector<double> data(ad::element_count(shape));
    for (auto& v : data) v = io::read_f64(in);
    ckpt.tensors.emplace_back(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_checkpoint(ckpt, out);
  if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_checkpoint(in);
}

// --- network ---------------------------------------------------------------------------

Network::Network(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed(seed, {0x1417}));
  const nn::KernelSize kernel{spec_.kernel, spec_.kernel};
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    const std::string name = "layer" + std::to_string(i) + "." + layer_name(l.kind);
    Slot slot;
    slot.spec = l;
    switch (l.kind) {
      case LayerKind::Conv:
        slot.conv = std::make_unique<nn::ConvBlock>(name, l.in, l.out, kernel, spec_.degree, rng);
        break;
      case LayerKind::Res:
        slot.res = std::make_unique<nn::ResidualBlock>(name, l.in, l.out, kernel, spec_.degree,
                                                       spec_.two_conv_residual, rng);
        break;
      case LayerKind::FC:
        slot.fc = std::make_unique<nn::Linear>(name, l.in, l.out, rng);
        break;
      default:
        break;
    }
    slots_.push_back(std::move(slot));
  }
}

namespace {

// Convolution operands for one graph level, built lazily per kernel size.
class LevelGraphs {
 public:
  LevelGraphs(const nn::GraphStructure& level, int degree, bool self_loops)
      : level_(level), degree_(degree), self_loops_(self_loops) {}

  std::shared_ptr<const nn::ConvGraph> get(nn::KernelSize kernel) {
    for (auto& [k, g] : cache_) {
      if (k == kernel) return g;
    }
    std::vector<Edge> edges = level_.edges;
    std::vector<Pseudo> pseudo = level_.pseudo;
    if (self_loops_) {
      for (std::uint32_t v = 0; v < level_.num_nodes(); ++v) {
        edges.push_back({v, v});
        pseudo.push_back({0.0, 0.0});
      }
    }
    auto g = std::make_shared<const nn::ConvGraph>(
        nn::make_conv_graph(level_.num_nodes(), edges, pseudo, degree_, kernel));
    cache_.emplace_back(kernel, g);
    return g;
  }

 private:
  const nn::GraphStructure& level_;
  int degree_;
  bool self_loops_;
  std::vector<std::pair<nn::KernelSize, std::shared_ptr<const nn::ConvGraph>>> cache_;
};

}  // namespace

ad::Var Network::forward(ad::Tape& tape, const GraphBatch& batch, bool train, std::uint64_t dropout_seed) {
  const auto& g = batch.graph;
  if (g.channels != spec_.input_channels) {
    throw ShapeError("network expects " + std::to_string(spec_.input_channels) + " input channels, batch has " +
                     std::to_string(g.channels));
  }
  nn::GraphStructure level = nn::structure_of(batch);
  level.grid_w = spec_.grid_w;
  level.grid_h = spec_.grid_h;
  auto graphs = std::make_unique<LevelGraphs>(level, spec_.degree, spec_.self_loops);

  ad::Var x = tape.constant(ad::Tensor({g.num_nodes(), static_cast<std::size_t>(g.channels)}, g.features));
  const nn::KernelSize kernel{spec_.kernel, spec_.kernel};
  bool first_fc = true;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    auto& slot = slots_[i];
    const auto& l = slot.spec;
    switch (l.kind) {
      case LayerKind::Conv:
        x = slot.conv->forward(tape, x, graphs->get(kernel), train);
        break;
      case LayerKind::Res:
        x = slot.res->forward(tape, x, graphs->get(kernel), graphs->get({1, 1}), train);
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        nn::PoolSpec ps;
        ps.cluster_w = l.cluster_w;
        ps.cluster_h = l.cluster_h;
        ps.mode = l.kind == LayerKind::MaxPool ? nn::PoolMode::Max : nn::PoolMode::Avg;
        ps.grid_w = level.grid_w;
        ps.grid_h = level.grid_h;
        ps.to_cluster_units = true;
        const bool final_stage = i + 1 < slots_.size() && slots_[i + 1].spec.kind == LayerKind::FC;
        if (final_stage) {
          const auto p = ps.clusters_per_graph();
          x = nn::pool_to_grid(x, level, ps);
          x = ad::reshape(x, {batch.num_graphs(), p * static_cast<std::size_t>(l.out)});
        } else {
          auto pooled = nn::pool_structure(level, ps);
          x = nn::pool_features(x, pooled, ps.mode);
          level = std::move(pooled.coarse);
          graphs = std::make_unique<LevelGraphs>(level, spec_.degree, spec_.self_loops);
        }
        break;
      }
      case LayerKind::FC: {
        const bool last = i + 1 == slots_.size();
        x = slot.fc->forward(tape, x, last ? nn::Activation::Identity : nn::Activation::Relu);
        if (first_fc) {
          x = ad::dropout(x, spec_.dropout, train, dropout_seed);
          first_fc = false;
        }
        break;
      }
    }
  }
  return x;
}

namespace {

// Batch-norm layers of a slot in parameter order.
template <typename Slot, typename Fn>
void for_each_block(Slot& s, Fn&& fn) {
  if (s.conv) fn(&s.conv->conv(), &s.conv->bn());
  if (s.res) {
    fn(&s.res->main_conv(), &s.res->main_bn());
    if (s.res->two_conv()) fn(s.res->second_conv(), s.res->second_bn());
    fn(&s.res->shortcut_conv(), &s.res->shortcut_bn());
  }
}

}  // namespace

std::vector<ad::Parameter*> Network::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& s : slots_) {
    for_each_block(s, [&](nn::SplineConv* c, nn::BatchNorm* b) {
      out.push_back(&c->weight());
      out.push_back(&c->bias());
      out.push_back(&b->state().gamma);
      out.push_back(&b->state().beta);
    });
    if (s.fc) {
      out.push_back(&s.fc->weight());
      out.push_back(&s.fc->bias());
    }
  }
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

void Network::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::vector<std::pair<std::string, ad::Tensor*>> Network::named_tensors() {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  for (auto* p : parameters()) out.emplace_back(p->name, &p->value);
  for (auto& s : slots_) {
    for_each_block(s, [&](nn::SplineConv*, nn::BatchNorm* b) {
      auto& st = b->state();
      out.emplace_back(st.name + ".running_mean", &st.running_mean);
      out.emplace_back(st.name + ".running_var", &st.running_var);
    });
  }
  return out;
}

std::vector<std::pair<std::string, const ad::Tensor*>> Network::named_tensors() const {
  auto mut = const_cast<Network*>(this)->named_tensors();
  return {mut.begin(), mut.end()};
}

Checkpoint Network::checkpoint(const std::string& run_config) const {
  Checkpoint c;
  c.model_config = spec_.to_config();
  c.run_config = run_config;
  for (const auto& [name, t] : named_tensors()) c.tensors.emplace_back(name, *t);
  return c;
}

void Network::load(const Checkpoint& ckpt) {
  std::map<std::string, const ad::Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  auto mine = named_tensors();
  if (mine.size() != ckpt.tensors.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                     std::to_string(mine.size()));
  }
  for (auto& [name, t] : mine) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("checkpoint is missing tensor " + name);
    if (it->second->shape() != t->shape()) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + ad::shape_string(it->second->shape()) +
                       ", model expects " + ad::shape_string(t->shape()));
    }
    *t = *it->second;
  }
  for (auto* p : parameters()) p->zero_grad();
}

Network Network::from_checkpoint(const Checkpoint& ckpt) {
  Network net(ModelSpec::from_config(ckpt.model_config), 0);
  net.load(ckpt);
  return net;
}

}  // namespace evg
