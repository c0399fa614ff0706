#include "fecil/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace fecil {

namespace {

Var<float> he_conv(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(in * k * k)));
  Tensor w(Shape{out, in, k, k});
  for (auto& v : w.values()) v = dist(rng);
  return Var<float>(std::move(w), true);
}

BatchNormLayer make_bn(std::size_t channels) {
  return BatchNormLayer{Var<float>(Tensor(Shape{channels}, 1.0f), true),
                        Var<float>(Tensor(Shape{channels}, 0.0f), true), ops::BatchNormStats<float>(channels)};
}

ConvBn make_conv_bn(std::size_t in, std::size_t out, std::size_t k, int stride, int pad, Rng& rng) {
  return ConvBn{he_conv(out, in, k, rng), make_bn(out), stride, pad};
}

Var<float> apply(ConvBn& layer, const Var<float>& x, Mode mode, bool frozen) {
  auto y = ops::conv2d(x, layer.weight, layer.stride, layer.pad);
  const auto bn_mode = mode == Mode::train ? ops::BnMode::train : ops::BnMode::eval;
  return ops::batchnorm(y, layer.bn.gamma, layer.bn.beta, layer.bn.stats, bn_mode, frozen);
}

void for_each_conv_bn_var(ConvBn& c, const std::function<void(Var<float>&)>& fn) {
  fn(c.weight);
  fn(c.bn.gamma);
  fn(c.bn.beta);
}

void visit_conv_bn(const std::string& prefix, ConvBn& c, const TensorVisitor& visit) {
  visit(prefix + ".conv.weight", c.weight.mutable_value());
  visit(prefix + ".bn.gamma", c.bn.gamma.mutable_value());
  visit(prefix + ".bn.beta", c.bn.beta.mutable_value());
  visit(prefix + ".bn.running_mean", c.bn.stats.mean);
  visit(prefix + ".bn.running_var", c.bn.stats.var);
}

void init_rows(Tensor& weight, Tensor& bias, std::size_t first_row, Rng& rng) {
  const std::size_t in = weight.shape()[1];
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (std::size_t r = first_row; r < weight.shape()[0]; ++r) {
    for (std::size_t c = 0; c < in; ++c) weight.at(r, c) = dist(rng);
    bias[r] = 0.0f;
  }
}

}  // namespace

void BackboneConfig::validate() const {
  if (in_channels < 1 || width < 1 || blocks_per_stage < 1 || stages < 1 || image_side < 1) {
    throw std::invalid_argument("backbone config: all sizes must be positive");
  }
  if ((image_side >> (stages - 1)) < 1) {
    throw std::invalid_argument("backbone config: image_side too small for " + std::to_string(stages) + " stages");
  }
}

std::string BackboneConfig::echo() const {
  std::ostringstream os;
  os << "backbone.in_channels=" << in_channels << "\n"
     << "backbone.width=" << width << "\n"
     << "backbone.blocks_per_stage=" << blocks_per_stage << "\n"
     << "backbone.stages=" << stages << "\n"
     << "backbone.image_side=" << image_side << "\n";
  return os.str();
}

BackboneConfig BackboneConfig::parse_echo(const std::string& text) {
  BackboneConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "backbone.in_channels") c.in_channels = std::stoi(value);
    else if (key == "backbone.width") c.width = std::stoi(value);
    else if (key == "backbone.blocks_per_stage") c.blocks_per_stage = std::stoi(value);
    else if (key == "backbone.stages") c.stages = std::stoi(value);
    else if (key == "backbone.image_side") c.image_side = std::stoi(value);
  }
  c.validate();
  return c;
}

FeatureExtractor::FeatureExtractor(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const auto w = static_cast<std::size_t>(config_.width);
  stem_ = make_conv_bn(static_cast<std::size_t>(config_.in_channels), w, 3, 1, 1, rng);
  std::size_t channels = w;
  for (int s = 0; s < config_.stages; ++s) {
    const std::size_t out = w << s;
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      ResidualBlock block{make_conv_bn(channels, out, 3, stride, 1, rng), make_conv_bn(out, out, 3, 1, 1, rng),
                          std::nullopt};
      if (stride != 1 || channels != out) block.shortcut = make_conv_bn(channels, out, 1, stride, 0, rng);
      blocks_.push_back(std::move(block));
      channels = out;
    }
  }
}

FeatureExtractor::FeatureExtractor(const FeatureExtractor& other)
    : config_(other.config_), stem_(other.stem_), blocks_(other.blocks_), frozen_(other.frozen_) {
  for_each_var([](Var<float>& v) { v = v.clone(); });
}

FeatureExtractor& FeatureExtractor::operator=(const FeatureExtractor& other) {
  if (this != &other) {
    FeatureExtractor copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void FeatureExtractor::for_each_var(const std::function<void(Var<float>&)>& fn) {
  for_each_conv_bn_var(stem_, fn);
  for (auto& b : blocks_) {
    for_each_conv_bn_var(b.first, fn);
    for_each_conv_bn_var(b.second, fn);
    if (b.shortcut) for_each_conv_bn_var(*b.shortcut, fn);
  }
}

Var<float> FeatureExtractor::forward(const Var<float>& x, Mode mode) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != static_cast<std::size_t>(config_.in_channels) ||
      s[2] != static_cast<std::size_t>(config_.image_side) || s[3] != static_cast<std::size_t>(config_.image_side)) {
    throw ShapeError("feature extractor expects [N," + std::to_string(config_.in_channels) + "," +
                     std::to_string(config_.image_side) + "," + std::to_string(config_.image_side) + "], got " +
                     shape_str(s));
  }
  auto h = ops::relu(apply(stem_, x, mode, frozen_));
  for (auto& b : blocks_) {
    auto y = ops::relu(apply(b.first, h, mode, frozen_));
    y = apply(b.second, y, mode, frozen_);
    auto skip = b.shortcut ? apply(*b.shortcut, h, mode, frozen_) : h;
    h = ops::relu(ops::add(y, skip));
  }
  return ops::global_avg_pool(h);
}

void FeatureExtractor::set_frozen(bool frozen) {
  frozen_ = frozen;
  for_each_var([frozen](Var<float>& v) { v.set_requires_grad(!frozen); });
}

std::vector<Var<float>> FeatureExtractor::parameters() const {
  std::vector<Var<float>> out;
  const_cast<FeatureExtractor*>(this)->for_each_var([&out](Var<float>& v) { out.push_back(v); });
  return out;
}

std::size_t FeatureExtractor::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

void FeatureExtractor::visit_tensors(const TensorVisitor& visit) {
  visit_conv_bn("stem", stem_, visit);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i);
    visit_conv_bn(prefix + ".first", blocks_[i].first, visit);
    visit_conv_bn(prefix + ".second", blocks_[i].second, visit);
    if (blocks_[i].shortcut) visit_conv_bn(prefix + ".shortcut", *blocks_[i].shortcut, visit);
  }
}

Classifier::Classifier(std::size_t in_dim, std::vector<int> class_ids, Rng& rng) : class_ids_(std::move(class_ids)) {
  Tensor w(Shape{class_ids_.size(), in_dim});
  Tensor b(Shape{class_ids_.size()});
  init_rows(w, b, 0, rng);
  weight_ = Var<float>(std::move(w), true);
  bias_ = Var<float>(std::move(b), true);
  validate();
}

Classifier::Classifier(Tensor weight, Tensor bias, std::vector<int> class_ids)
    : weight_(std::move(weight), true), bias_(std::move(bias), true), class_ids_(std::move(class_ids)) {
  validate();
}

Classifier::Classifier(const Classifier& other)
    : weight_(other.weight_.defined() ? other.weight_.clone() : Var<float>()),
      bias_(other.bias_.defined() ? other.bias_.clone() : Var<float>()),
      class_ids_(other.class_ids_) {}

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) {
    Classifier copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Classifier::validate() const {
  if (weight_.shape().size() != 2 || weight_.shape()[0] != class_ids_.size() ||
      bias_.shape() != Shape{class_ids_.size()}) {
    throw ShapeError("classifier: weight " + shape_str(weight_.shape()) + " / bias " + shape_str(bias_.shape()) +
                     " do not match " + std::to_string(class_ids_.size()) + " class ids");
  }
  std::unordered_set<int> seen;
  for (int id : class_ids_) {
    if (!seen.insert(id).second) throw std::invalid_argument("classifier: duplicate class id " + std::to_string(id));
  }
}

int Classifier::row_of(int class_id) const {
  for (std::size_t i = 0; i < class_ids_.size(); ++i) {
    if (class_ids_[i] == class_id) return static_cast<int>(i);
  }
  return -1;
}

Var<float> Classifier::forward(const Var<float>& features) const { return ops::dense(features, weight_, bias_); }

void Classifier::set_trainable(bool on) {
  weight_.set_requires_grad(on);
  bias_.set_requires_grad(on);
}

Var<float> CompactNetwork::forward(const Var<float>& x, Mode mode) {
  if (head.in_dim() != extractor.out_dim()) throw ShapeError("compact network: head/extractor width mismatch");
  return head.forward(extractor.forward(x, mode));
}

std::vector<Var<float>> CompactNetwork::parameters() const {
  auto p = extractor.parameters();
  for (auto& h : head.parameters()) p.push_back(h);
  return p;
}

std::vector<Var<float>> DynamicNetwork::trainable_parameters() const {
  auto p = next.parameters();
  for (auto& h : head_big.parameters()) p.push_back(h);
  if (head_aux.rows() > 0) {
    for (auto& h : head_aux.parameters()) p.push_back(h);
  }
  return p;
}

std::vector<int> DynamicNetwork::old_class_ids() const {
  const auto& ids = head_big.class_ids();
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(old_class_count)};
}

std::vector<int> DynamicNetwork::new_class_ids() const {
  const auto& ids = head_big.class_ids();
  return {ids.begin() + static_cast<std::ptrdiff_t>(old_class_count), ids.end()};
}

BigOutput forward_big(DynamicNetwork& net, const Var<float>& x, Mode mode) {
  auto old_features = net.prev.forward(x, Mode::eval);
  auto new_features = net.next.forward(x, mode);
  auto features = ops::concat<float>({old_features, new_features}, 1);
  Var<float> aux;
  if (net.head_aux.rows() > 0) aux = net.head_aux.forward(new_features);
  return BigOutput{net.head_big.forward(features), aux, features};
}

DynamicNetwork expand(const CompactNetwork& prev, const std::vector<int>& new_class_ids, Rng& rng) {
  if (new_class_ids.empty()) throw std::invalid_argument("expand: at least one new class is required");
  const auto& old_ids = prev.head.class_ids();
  for (int id : new_class_ids) {
    if (prev.head.row_of(id) >= 0) throw std::invalid_argument("expand: class " + std::to_string(id) + " already known");
  }
  FeatureExtractor frozen = prev.extractor;
  frozen.set_frozen(true);
  FeatureExtractor next = prev.extractor;
  next.set_frozen(false);

  const std::size_t d_old = frozen.out_dim(), d_new = next.out_dim();
  const std::size_t rows = old_ids.size() + new_class_ids.size();
  Tensor w(Shape{rows, d_old + d_new});
  Tensor b(Shape{rows});
  const auto& pw = prev.head.weight().value();
  const auto& pb = prev.head.bias().value();
  for (std::size_t r = 0; r < old_ids.size(); ++r) {
    for (std::size_t c = 0; c < d_old; ++c) w.at(r, c) = pw.at(r, c);
    b[r] = pb[r];
  }
  init_rows(w, b, old_ids.size(), rng);
  std::vector<int> ids = old_ids;
  ids.insert(ids.end(), new_class_ids.begin(), new_class_ids.end());

  std::vector<int> aux_ids(new_class_ids.size() + 1);
  for (std::size_t i = 0; i < aux_ids.size(); ++i) aux_ids[i] = static_cast<int>(i);
  Classifier aux(d_new, std::move(aux_ids), rng);

  return DynamicNetwork{std::move(frozen), std::move(next), Classifier(std::move(w), std::move(b), std::move(ids)),
                        std::move(aux), old_ids.size()};
}

std::vector<int> aux_targets(const std::vector<int>& labels, const std::vector<int>& class_ids,
                             std::size_t old_class_count) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    const auto it = std::find(class_ids.begin(), class_ids.end(), y);
    if (it == class_ids.end()) throw std::invalid_argument("aux_targets: unknown class id " + std::to_string(y));
    const auto row = static_cast<std::size_t>(it - class_ids.begin());
    out.push_back(row < old_class_count ? 0 : static_cast<int>(row - old_class_count + 1));
  }
  return out;
}

double mean_row_norm(const Classifier& head, const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("mean_row_norm: empty class set");
  const auto& w = head.weight().value();
  double total = 0.0;
  for (int id : ids) {
    const int r = head.row_of(id);
    if (r < 0) throw std::invalid_argument("mean_row_norm: unknown class id " + std::to_string(id));
    double sq = 0.0;
    for (std::size_t c = 0; c < head.in_dim(); ++c) {
      const double v = w.at(static_cast<std::size_t>(r), c);
      sq += v * v;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(ids.size());
}

Classifier weight_align(const Classifier& head, const std::vector<int>& old_ids, const std::vector<int>& new_ids) {
  if (old_ids.empty() || new_ids.empty()) throw std::invalid_argument("weight_align: both class groups must be non-empty");
  if (old_ids.size() + new_ids.size() != head.rows()) {
    throw std::invalid_argument("weight_align: class groups do not partition the head");
  }
  std::unordered_set<int> seen;
  for (const auto* group : {&old_ids, &new_ids}) {
    for (int id : *group) {
      if (head.row_of(id) < 0 || !seen.insert(id).second) {
        throw std::invalid_argument("weight_align: class groups do not partition the head (id " + std::to_string(id) + ")");
      }
    }
  }
  const double old_norm = mean_row_norm(head, old_ids);
  const double new_norm = mean_row_norm(head, new_ids);
  if (!(new_norm > 0.0)) throw std::domain_error("weight_align: mean new-class weight norm is zero");
  const double gamma = old_norm / new_norm;
  Classifier out = head;
  auto& w = out.weight().mutable_value();
  for (int id : new_ids) {
    const auto r = static_cast<std::size_t>(head.row_of(id));
    for (std::size_t c = 0; c < head.in_dim(); ++c) {
      w.at(r, c) = static_cast<float>(static_cast<double>(w.at(r, c)) * gamma);
    }
  }
  return out;
}

CompactNetwork compress_init(const CompactNetwork& prev, const std::vector<int>& new_class_ids, Rng& rng) {
  const auto& old_ids = prev.head.class_ids();
  const std::size_t d = prev.extractor.out_dim();
  const std::size_t rows = old_ids.size() + new_class_ids.size();
  Tensor w(Shape{rows, d});
  Tensor b(Shape{rows});
  std::copy_n(prev.head.weight().value().data(), old_ids.size() * d, w.data());
  std::copy_n(prev.head.bias().value().data(), old_ids.size(), b.data());
  init_rows(w, b, old_ids.size(), rng);
  std::vector<int> ids = old_ids;
  ids.insert(ids.end(), new_class_ids.begin(), new_class_ids.end());
  FeatureExtractor extractor = prev.extractor;
  extractor.set_frozen(false);
  return CompactNetwork{std::move(extractor), Classifier(std::move(w), std::move(b), std::move(ids))};
}

std::size_t param_count(const FeatureExtractor& e) { return e.param_count(); }
std::size_t param_count(const Classifier& h) { return h.param_count(); }
std::size_t param_count(const CompactNetwork& net) { return net.extractor.param_count() + net.head.param_count(); }
std::size_t param_count(const DynamicNetwork& net) {
  return net.prev.param_count() + net.next.param_count() + net.head_big.param_count() + net.head_aux.param_count();
}

}  // namespace fecil
