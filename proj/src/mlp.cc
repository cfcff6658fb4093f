#include "koi/mlp.h"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mlp_io.h"

namespace koi {

Mlp::Mlp(const MlpShape& shape, std::mt19937_64& rng) : shape_(shape) {
  if (shape.input < 1 || shape.output < 1 || shape.hidden < 1 ||
      shape.hidden_layers < 0)
    throw InvariantError("invalid network shape");
  std::vector<int> widths{shape.input};
  for (int i = 0; i < shape.hidden_layers; ++i) widths.push_back(shape.hidden);
  widths.push_back(shape.output);

  Eigen::Index size = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer{size, size + Eigen::Index(widths[l]) * widths[l + 1], widths[l],
                widths[l + 1]};
    size = layer.bias + layer.out;
    offsets_.push_back(layer);
  }
  params_.resize(size);
  for (const Layer& layer : offsets_) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(layer.in),
                                             1.0 / std::sqrt(layer.in));
    for (Eigen::Index i = layer.weight; i < layer.bias + layer.out; ++i)
      params_[i] = u(rng);
  }
}

Eigen::Map<const Matrix> Mlp::weight(int l) const {
  const Layer& layer = offsets_[l];
  return {params_.data() + layer.weight, layer.in, layer.out};
}

Eigen::Map<const Vector> Mlp::bias(int l) const {
  const Layer& layer = offsets_[l];
  return {params_.data() + layer.bias, layer.out};
}

Matrix Mlp::forward(const Matrix& x) const {
  Tape tape;
  return forward(x, tape);
}

Matrix Mlp::partial_forward(const Matrix& x, int layers) const {
  if (layers < 1 || layers > layer_count())
    throw InvariantError("layer count out of range");
  Tape tape;
  forward(x, tape);
  return tape.outputs[layers - 1];
}

Matrix Mlp::forward(const Matrix& x, Tape& tape) const {
  if (x.cols() != shape_.input)
    throw DimensionError("network expects " + std::to_string(shape_.input) +
                         " inputs, got " + std::to_string(x.cols()));
  tape.inputs.assign(1, x);
  tape.outputs.clear();
  Matrix h = x;
  for (int l = 0; l < layer_count(); ++l) {
    Matrix z = h * weight(l);
    z.rowwise() += bias(l).transpose();
    bool squash = hidden(l) ? shape_.activation == Activation::kTanh
                            : shape_.tanh_output;
    if (squash)
      z = z.array().tanh();
    else if (hidden(l))
      z = z.cwiseMax(0.0);
    tape.outputs.push_back(z);
    if (hidden(l)) tape.inputs.push_back(z);
    h = std::move(z);
  }
  return h;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& grad_out,
                     Vector* grad) const {
  Matrix g = grad_out;
  for (int l = layer_count() - 1; l >= 0; --l) {
    const Matrix& out = tape.outputs[l];
    bool squash = hidden(l) ? shape_.activation == Activation::kTanh
                            : shape_.tanh_output;
    if (squash)
      g.array() *= 1.0 - out.array().square();
    else if (hidden(l))
      g.array() *= (out.array() > 0.0).cast<double>();
    if (grad) {
      const Layer& layer = offsets_[l];
      Eigen::Map<Matrix> dw(grad->data() + layer.weight, layer.in, layer.out);
      Eigen::Map<Vector> db(grad->data() + layer.bias, layer.out);
      dw.noalias() += tape.inputs[l].transpose() * g;
      db += g.colwise().sum().transpose();
    }
    g = g * weight(l).transpose();
  }
  return g;
}

Adam::Adam(Eigen::Index size, AdamOptions options)
    : m(Vector::Zero(size)), v(Vector::Zero(size)), options_(options) {}

void Adam::step(Vector& params, const Vector& grad) {
  if (grad.size() != params.size() || m.size() != params.size())
    throw DimensionError("optimizer state does not match parameters");
  ++t;
  const auto& o = options_;
  m = o.beta1 * m + (1 - o.beta1) * grad;
  v = o.beta2 * v + (1 - o.beta2) * grad.cwiseAbs2();
  double c1 = 1 - std::pow(o.beta1, static_cast<double>(t));
  double c2 = 1 - std::pow(o.beta2, static_cast<double>(t));
  params.array() -= o.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + o.eps);
}

void soft_update(Mlp& target, const Mlp& online, double rate) {
  if (!(rate > 0.0 && rate <= 1.0))
    throw InvariantError("soft update rate must be in (0, 1]");
  if (!(target.shape() == online.shape()))
    throw DimensionError("soft update between networks of different shape");
  if (rate == 1.0)
    target.params() = online.params();
  else
    target.params() = (1.0 - rate) * target.params() + rate * online.params();
}

namespace detail {

void write_mlp(BinaryWriter& w, const Mlp& m) {
  const MlpShape& s = m.shape();
  for (int v : {s.input, s.hidden, s.output, s.hidden_layers,
                static_cast<int>(s.activation), static_cast<int>(s.tanh_output)})
    w.put<std::int32_t>(v);
  w.put_matrix(m.params());
}

Mlp read_mlp(BinaryReader& r) {
  MlpShape s;
  s.input = r.get<std::int32_t>();
  s.hidden = r.get<std::int32_t>();
  s.output = r.get<std::int32_t>();
  s.hidden_layers = r.get<std::int32_t>();
  s.activation = static_cast<Activation>(r.get<std::int32_t>());
  s.tanh_output = r.get<std::int32_t>() != 0;
  std::mt19937_64 unused;
  Mlp m(s, unused);
  Matrix p = r.get_matrix();
  if (p.size() != m.parameter_count())
    throw FormatError("network size mismatch");
  m.params() = Eigen::Map<const Vector>(p.data(), p.size());
  return m;
}

}  // namespace detail

namespace {
constexpr char kMlpMagic[8] = {'K', 'O', 'I', 'M', 'L', 'P', '\0', '\0'};
}

void save_mlp(const Mlp& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMlpMagic, sizeof kMlpMagic);
  detail::BinaryWriter w(out);
  detail::write_mlp(w, m);
  if (!w.ok()) throw IoError("failed writing " + path.string());
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMlpMagic, sizeof magic) != 0)
    throw FormatError("not a network file: " + path.string());
  detail::BinaryReader r(in);
  return detail::read_mlp(r);
}

}  // namespace koi
