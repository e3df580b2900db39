#include "hrsketch/network.hpp"

#include <set>

namespace hrsketch {

std::string to_string(BlockKind kind) {
  return kind == BlockKind::basic ? "basic" : "multi_scale";
}

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "basic") return BlockKind::basic;
  if (s == "multi_scale" || s == "multi-scale" || s == "multiscale") return BlockKind::multi_scale;
  throw ContractError("unknown block kind '" + s + "'");
}

NetworkConfig NetworkConfig::full() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::desk(std::size_t num_classes) {
  NetworkConfig cfg;
  cfg.input_side = 64;
  cfg.stages = {{16, 2}, {32, 2}, {64, 2}, {128, 2}};
  cfg.num_classes = num_classes;
  return cfg;
}

std::size_t NetworkConfig::front_end_side() const {
  const std::size_t conv = conv_output_size(input_side, stem_kernel, stem_stride, stem_padding);
  return conv_output_size(conv, pool_kernel, pool_stride, pool_padding);
}

std::size_t NetworkConfig::trunk_output_side() const {
  std::size_t side = front_end_side();
  for (std::size_t s = 1; s < stages.size(); ++s) side = conv_output_size(side, 1, 2, 0);
  return side;
}

void NetworkConfig::validate() const {
  if (input_side == 0 || input_channels == 0) throw ContractError("input must be nonempty");
  if (stages.empty()) throw ContractError("stage plan is empty");
  for (const auto& st : stages) {
    if (st.channels == 0 || st.blocks == 0) {
      throw ContractError("every stage needs at least one block and one channel");
    }
  }
  if (num_classes == 0) throw ContractError("need at least one class");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in (0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("beta must lie in [0, 1]");
  std::size_t trunk = 0;
  try {
    trunk = trunk_output_side();
  } catch (const DimensionError& e) {
    throw ContractError(std::string("input side too small for the stage plan: ") + e.what());
  }
  if (outer_skip) {
    const std::size_t fs = front_end_side();
    if (fs + 2 * outer_padding < outer_kernel) {
      throw ContractError("outer shortcut kernel exceeds the shallow feature map");
    }
    const std::size_t outer = conv_output_size(fs, outer_kernel, outer_stride, outer_padding);
    if (outer != trunk) {
      throw ContractError("outer shortcut lands on " + std::to_string(outer) + "x" +
                          std::to_string(outer) + " but the trunk ends at " +
                          std::to_string(trunk) + "x" + std::to_string(trunk));
    }
  }
}

nlohmann::json NetworkConfig::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const auto& s : stages) stages_json.push_back({s.channels, s.blocks});
  return {
      {"input_side", input_side},
      {"input_channels", input_channels},
      {"stages", stages_json},
      {"num_classes", num_classes},
      {"alpha", alpha},
      {"beta", beta},
      {"block_kind", to_string(block_kind)},
      {"inner_skips", inner_skips},
      {"outer_skip", outer_skip},
      {"batchnorm", batchnorm},
      {"post_activation", post_activation},
      {"stem", {stem_kernel, stem_stride, stem_padding}},
      {"pool", {pool_kernel, pool_stride, pool_padding}},
      {"outer", {outer_kernel, outer_stride, outer_padding}},
  };
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.input_side = j.at("input_side");
  c.input_channels = j.at("input_channels");
  c.stages.clear();
  for (const auto& s : j.at("stages")) c.stages.push_back({s.at(0), s.at(1)});
  c.num_classes = j.at("num_classes");
  c.alpha = j.at("alpha");
  c.beta = j.at("beta");
  c.block_kind = block_kind_from_string(j.at("block_kind"));
  c.inner_skips = j.at("inner_skips");
  c.outer_skip = j.at("outer_skip");
  c.batchnorm = j.at("batchnorm");
  c.post_activation = j.at("post_activation");
  c.stem_kernel = j.at("stem").at(0);
  c.stem_stride = j.at("stem").at(1);
  c.stem_padding = j.at("stem").at(2);
  c.pool_kernel = j.at("pool").at(0);
  c.pool_stride = j.at("pool").at(1);
  c.pool_padding = j.at("pool").at(2);
  c.outer_kernel = j.at("outer").at(0);
  c.outer_stride = j.at("outer").at(1);
  c.outer_padding = j.at("outer").at(2);
  return c;
}

namespace {

Shape chw(const Tensor& t) {
  const Shape& s = t.shape();
  return s.size() == 4 ? Shape{s[1], s[2], s[3]} : s;
}

void record(ShapeTrace* trace, const char* name, const Tensor& t) {
  if (trace) trace->emplace_back(name, chw(t));
}

}  // namespace

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const BlockOptions opts{cfg_.batchnorm, cfg_.post_activation};
  const std::size_t c0 = cfg_.stages.front().channels;
  stem = ConvUnit(cfg_.input_channels, c0, cfg_.stem_kernel, cfg_.stem_stride,
                  cfg_.stem_padding, cfg_.batchnorm, true);
  std::size_t in_ch = c0;
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    const auto& spec = cfg_.stages[s];
    const std::size_t stride = s == 0 ? 1 : 2;
    Stage stage;
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      const std::size_t bin = b == 0 ? in_ch : spec.channels;
      const std::size_t bstride = b == 0 ? stride : 1;
      if (cfg_.block_kind == BlockKind::multi_scale) {
        stage.blocks.push_back(
            std::make_unique<MultiScaleBlock>(bin, spec.channels, bstride, cfg_.alpha, opts));
      } else {
        stage.blocks.push_back(std::make_unique<BasicBlock>(bin, spec.channels, bstride, opts));
      }
    }
    if (cfg_.inner_skips) {
      stage.projection.emplace(in_ch, spec.channels, 1, stride, 0, cfg_.batchnorm, false);
    }
    stages.push_back(std::move(stage));
    in_ch = spec.channels;
  }
  if (cfg_.outer_skip) {
    outer_projection.emplace(c0, in_ch, cfg_.outer_kernel, cfg_.outer_stride,
                             cfg_.outer_padding, cfg_.batchnorm, false);
  }
  head = Conv2d(in_ch, cfg_.num_classes, 1, 1, 0, true);
}

void Network::init(std::uint64_t seed) {
  Rng rng(seed);
  stem.init(rng);
  for (auto& stage : stages) {
    for (auto& b : stage.blocks) b->init(rng);
    if (stage.projection) stage.projection->init(rng);
  }
  if (outer_projection) outer_projection->init(rng);
  head.init(rng);
}

Tensor Network::front_end(const Tensor& sketch, ForwardContext& ctx, ShapeTrace* trace) {
  const Shape& s = sketch.shape();
  if (s.size() < 3 || s[s.size() - 3] != cfg_.input_channels) {
    throw DimensionError("front end expects " + std::to_string(cfg_.input_channels) +
                         "-channel input, got " + shape_str(s));
  }
  Tensor c = stem.forward(sketch, ctx.training);
  record(trace, "front_end.conv", c);
  Tensor p = max_pool2d(c, cfg_.pool_kernel, cfg_.pool_stride, cfg_.pool_padding);
  record(trace, "front_end.pool", p);
  return p;
}

Tensor Network::hierarchical_forward(const Tensor& shallow, ForwardContext& ctx,
                                     ShapeTrace* trace) {
  static const char* names[] = {"inner1", "inner2", "inner3", "inner4"};
  Tensor x = shallow;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    Tensor trunk = x;
    for (auto& b : stages[s].blocks) trunk = b->forward(trunk, ctx);
    if (stages[s].projection) {
      Tensor skip = stages[s].projection->forward(x, ctx.training);
      if (skip.shape() != trunk.shape()) {
        throw DimensionError("inner shortcut " + shape_str(skip.shape()) +
                             " does not match stage output " + shape_str(trunk.shape()));
      }
      trunk = add(trunk, skip);
    }
    x = trunk;
    if (s < 4) record(trace, names[s], x);
  }
  if (outer_projection) {
    Tensor p = outer_projection->forward(shallow, ctx.training);
    record(trace, "outer.projection", p);
    if (p.shape() != x.shape()) {
      throw DimensionError("outer shortcut " + shape_str(p.shape()) + " does not match trunk " +
                           shape_str(x.shape()));
    }
    x = add(x, scale(p, cfg_.beta));
  }
  record(trace, "hierarchical", x);
  return x;
}

ForwardOutput Network::classify(const Tensor& features, ShapeTrace* trace) {
  const Shape& s = features.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw DimensionError("classify expects [C,H,W] or [N,C,H,W], got " + shape_str(s));
  }
  const bool batched = s.size() == 4;
  const std::size_t n = batched ? s[0] : 1;
  const std::size_t side = s[s.size() - 1];
  if (s[s.size() - 2] != side) throw DimensionError("classify expects a square feature map");

  Tensor c = head.forward(features);
  record(trace, "branch1.conv", c);
  Tensor logits = avg_pool2d(c, side, side);
  Tensor embedding = avg_pool2d(features, side, side);
  const std::size_t k = cfg_.num_classes, d = s[s.size() - 3];
  ForwardOutput out;
  out.logits = batched ? reshape(logits, {n, k}) : reshape(logits, {k});
  out.embedding = batched ? reshape(embedding, {n, d}) : reshape(embedding, {d});
  if (trace) {
    trace->emplace_back("branch1.pool", Shape{k});
    trace->emplace_back("branch2.pool", Shape{d});
  }
  return out;
}

ForwardOutput Network::forward(const Tensor& sketch, ForwardContext& ctx, ShapeTrace* trace) {
  Tensor fs = front_end(sketch, ctx, trace);
  Tensor fh = hierarchical_forward(fs, ctx, trace);
  return classify(fh, trace);
}

void Network::visit(const ParamVisitor& fn) {
  stem.visit("stem", fn);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s + 1);
    for (std::size_t b = 0; b < stages[s].blocks.size(); ++b) {
      stages[s].blocks[b]->visit(prefix + ".block" + std::to_string(b + 1), fn);
    }
    if (stages[s].projection) stages[s].projection->visit(prefix + ".inner_proj", fn);
  }
  if (outer_projection) outer_projection->visit("outer_proj", fn);
  head.visit("head", fn);
}

std::vector<Tensor> Network::parameters() {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) out.push_back(t);
  });
  return out;
}

std::map<std::string, Tensor> Network::state() {
  std::map<std::string, Tensor> out;
  visit([&](const std::string& name, Tensor& t, bool) { out.emplace(name, t); });
  return out;
}

void Network::load_state(const std::map<std::string, Tensor>& tensors) {
  std::set<std::string> used;
  visit([&](const std::string& name, Tensor& t, bool) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw LoadError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                      ", model expects " + shape_str(t.shape()));
    }
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), t.mutable_values().begin());
    used.insert(name);
  });
  for (const auto& [name, _] : tensors) {
    if (!used.count(name)) {
      throw LoadError("checkpoint tensor '" + name + "' does not belong to this model");
    }
  }
}

void Network::zero_grad() {
  visit([](const std::string&, Tensor& t, bool) { t.zero_grad(); });
}

std::size_t Network::count_parameters() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) n += t.numel();
  });
  return n;
}

std::size_t Network::stage_conv_weight_count() const {
  std::size_t n = 0;
  for (const auto& st : stages) {
    for (const auto& b : st.blocks) n += b->conv_weight_count();
  }
  return n;
}

std::size_t Network::active_stage_conv_weight_count() const {
  std::size_t n = 0;
  for (const auto& st : stages) {
    for (const auto& b : st.blocks) n += b->active_conv_weight_count();
  }
  return n;
}

}  // namespace hrsketch
