#include "diffplan/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "diffplan/errors.hpp"

namespace diffplan {

namespace {

double silu(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

void check_net_config(const NetConfig& cfg) {
  if (cfg.plan_horizon < 1 || cfg.action_dim < 1 || cfg.obs_horizon < 1 ||
      cfg.state_dim < 1)
    throw std::invalid_argument("net config: dimensions must be >= 1");
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
    throw std::invalid_argument("net config: time_embed_dim must be even, >=2");
  if (cfg.hidden.empty())
    throw std::invalid_argument("net config: need at least one hidden layer");
  for (int h : cfg.hidden)
    if (h < 1) throw std::invalid_argument("net config: hidden width < 1");
}

}  // namespace

size_t DenoiserParams::param_count() const {
  size_t n = 0;
  for (size_t l = 0; l < weights.size(); ++l)
    n += static_cast<size_t>(weights[l].size()) + biases[l].size();
  return n;
}

bool DenoiserParams::finite() const {
  for (size_t l = 0; l < weights.size(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

GradientBundle GradientBundle::zeros_like(const DenoiserParams& p) {
  GradientBundle g;
  g.weights.reserve(p.weights.size());
  g.biases.reserve(p.biases.size());
  for (size_t l = 0; l < p.weights.size(); ++l) {
    g.weights.push_back(Mat::Zero(p.weights[l].rows(), p.weights[l].cols()));
    g.biases.push_back(Vec::Zero(p.biases[l].size()));
  }
  return g;
}

void GradientBundle::add_scaled(const GradientBundle& other, double scale) {
  for (size_t l = 0; l < weights.size(); ++l) {
    weights[l] += scale * other.weights[l];
    biases[l] += scale * other.biases[l];
  }
}

bool GradientBundle::finite() const {
  for (size_t l = 0; l < weights.size(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

double GradientBundle::max_abs() const {
  double m = 0.0;
  for (size_t l = 0; l < weights.size(); ++l) {
    m = std::max(m, weights[l].cwiseAbs().maxCoeff());
    if (biases[l].size() > 0)
      m = std::max(m, biases[l].cwiseAbs().maxCoeff());
  }
  return m;
}

DenoiserParams init_params(const NetConfig& cfg, RngStream& rng) {
  check_net_config(cfg);
  DenoiserParams p;
  p.cfg = cfg;
  std::vector<int> dims;
  dims.push_back(cfg.input_dim());
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(cfg.output_dim());

  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    int in = dims[l], out = dims[l + 1];
    Mat w(in, out);
    bool final_layer = (l + 2 == dims.size());
    double bound = final_layer ? 0.0 : std::sqrt(1.0 / in);
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j)
        w(i, j) = bound == 0.0 ? 0.0 : rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vec::Zero(out));
  }
  return p;
}

Vec time_embedding(int k, int dim) {
  Vec e(dim);
  int half = dim / 2;
  for (int j = 0; j < half; ++j) {
    double freq = std::pow(10000.0, -static_cast<double>(j) / half);
    e[2 * j] = std::sin(k * freq);
    e[2 * j + 1] = std::cos(k * freq);
  }
  return e;
}

Eigen::RowVectorXd pack_input(const NetConfig& cfg, const Mat& a_k,
                              const Mat& s_hist, int k) {
  if (a_k.rows() != cfg.plan_horizon || a_k.cols() != cfg.action_dim)
    throw std::invalid_argument("pack_input: action sequence shape mismatch");
  if (s_hist.rows() != cfg.obs_horizon || s_hist.cols() != cfg.state_dim)
    throw std::invalid_argument("pack_input: state history shape mismatch");

  Eigen::RowVectorXd x(cfg.input_dim());
  int pos = 0;
  for (int r = 0; r < a_k.rows(); ++r)
    for (int c = 0; c < a_k.cols(); ++c) x[pos++] = a_k(r, c);
  for (int r = 0; r < s_hist.rows(); ++r)
    for (int c = 0; c < s_hist.cols(); ++c) x[pos++] = s_hist(r, c);
  Vec te = time_embedding(k, cfg.time_embed_dim);
  for (int i = 0; i < te.size(); ++i) x[pos++] = te[i];
  return x;
}

Mat forward(const DenoiserParams& params, const Mat& inputs,
            ForwardCache* cache) {
  if (inputs.cols() != params.cfg.input_dim())
    throw std::invalid_argument("forward: input width mismatch");

  size_t L = params.layer_count();
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(inputs);
  }
  Mat h = inputs;
  for (size_t l = 0; l < L; ++l) {
    Mat z = (h * params.weights[l]).rowwise() + params.biases[l].transpose();
    if (l + 1 == L) {
      h = std::move(z);  // linear output layer
    } else {
      if (cache) cache->pre.push_back(z);
      h = z.unaryExpr([](double x) { return silu(x); });
      if (cache) cache->post.push_back(h);
    }
  }
  return h;
}

GradientBundle backward(const DenoiserParams& params, const ForwardCache& cache,
                        const Mat& d_output) {
  size_t L = params.layer_count();
  GradientBundle g = GradientBundle::zeros_like(params);

  Mat delta = d_output;  // cotangent at the current layer's output
  for (size_t l = L; l-- > 0;) {
    g.weights[l] = cache.post[l].transpose() * delta;
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = delta * params.weights[l].transpose();
      delta.array() *=
          cache.pre[l - 1].unaryExpr([](double x) { return silu_grad(x); })
              .array();
    }
  }
  return g;
}

ActionSequence predict_noise(const DenoiserParams& params,
                             const ActionSequence& a_k,
                             const StateHistory& s_hist, int k) {
  if (k < 1) throw std::invalid_argument("predict_noise: k must be >= 1");
  Mat x = pack_input(params.cfg, a_k, s_hist, k);
  Mat y = forward(params, x);
  ActionSequence out(params.cfg.plan_horizon, params.cfg.action_dim);
  int pos = 0;
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) = y(0, pos++);
  return out;
}

std::pair<double, GradientBundle> loss_and_grad_rows(
    const DenoiserParams& params, const Mat& inputs, const Mat& targets) {
  if (inputs.rows() == 0)
    throw std::invalid_argument("loss_and_grad: empty batch");
  if (targets.rows() != inputs.rows() ||
      targets.cols() != params.cfg.output_dim())
    throw std::invalid_argument("loss_and_grad: target shape mismatch");

  ForwardCache cache;
  Mat y = forward(params, inputs, &cache);
  Mat diff = y - targets;
  double batch = static_cast<double>(inputs.rows());
  double loss = diff.squaredNorm() / batch;
  Mat d_output = (2.0 / batch) * diff;
  return {loss, backward(params, cache, d_output)};
}

std::pair<double, GradientBundle> loss_and_grad(
    const DenoiserParams& params, std::span<const NoiseSample> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const NetConfig& cfg = params.cfg;
  Mat inputs(batch.size(), cfg.input_dim());
  Mat targets(batch.size(), cfg.output_dim());
  for (size_t b = 0; b < batch.size(); ++b) {
    inputs.row(b) = pack_input(cfg, batch[b].a_k, batch[b].s_hist, batch[b].k);
    int pos = 0;
    for (int r = 0; r < batch[b].target.rows(); ++r)
      for (int c = 0; c < batch[b].target.cols(); ++c)
        targets(b, pos++) = batch[b].target(r, c);
  }
  return loss_and_grad_rows(params, inputs, targets);
}

AdamState AdamState::zeros_like(const DenoiserParams& p) {
  AdamState s;
  for (size_t l = 0; l < p.weights.size(); ++l) {
    s.m_w.push_back(Mat::Zero(p.weights[l].rows(), p.weights[l].cols()));
    s.v_w.push_back(Mat::Zero(p.weights[l].rows(), p.weights[l].cols()));
    s.m_b.push_back(Vec::Zero(p.biases[l].size()));
    s.v_b.push_back(Vec::Zero(p.biases[l].size()));
  }
  return s;
}

void adam_update(DenoiserParams& params, AdamState& st,
                 const GradientBundle& grads, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("adam_update: lr must be > 0");
  if (!grads.finite())
    throw UpdateRejected("adam_update: non-finite gradients");

  st.step += 1;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));

  for (size_t l = 0; l < params.weights.size(); ++l) {
    st.m_w[l] = st.beta1 * st.m_w[l] + (1.0 - st.beta1) * grads.weights[l];
    st.v_w[l] = st.beta2 * st.v_w[l] +
                (1.0 - st.beta2) * grads.weights[l].cwiseProduct(grads.weights[l]);
    params.weights[l].array() -=
        lr * (st.m_w[l].array() / bc1) /
        ((st.v_w[l].array() / bc2).sqrt() + st.eps);

    st.m_b[l] = st.beta1 * st.m_b[l] + (1.0 - st.beta1) * grads.biases[l];
    st.v_b[l] = st.beta2 * st.v_b[l] +
                (1.0 - st.beta2) * grads.biases[l].cwiseProduct(grads.biases[l]);
    params.biases[l].array() -=
        lr * (st.m_b[l].array() / bc1) /
        ((st.v_b[l].array() / bc2).sqrt() + st.eps);
  }
  if (!params.finite())
    throw UpdateRejected("adam_update: parameters became non-finite");
}

namespace {

void write_f64_le(std::ostream& os, const double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t u = std::bit_cast<uint64_t>(data[i]);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b)
      bytes[b] = static_cast<unsigned char>((u >> (8 * b)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_f64_le(std::istream& is, double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated float payload");
    uint64_t u = 0;
    for (int b = 0; b < 8; ++b)
      u |= static_cast<uint64_t>(bytes[b]) << (8 * b);
    data[i] = std::bit_cast<double>(u);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);

  const NetConfig& c = ckpt.params.cfg;
  std::ostringstream header;
  header << "DIFFPLAN-CKPT 1 H=" << c.plan_horizon << " A=" << c.action_dim
         << " T_o=" << c.obs_horizon << " S=" << c.state_dim
         << " E=" << c.time_embed_dim << " K=" << ckpt.K
         << " schedule=" << to_string(ckpt.schedule) << " layers=";
  for (size_t l = 0; l < ckpt.params.weights.size(); ++l) {
    if (l) header << ",";
    header << ckpt.params.weights[l].rows() << "x"
           << ckpt.params.weights[l].cols();
  }
  os << header.str() << "\n";

  for (size_t l = 0; l < ckpt.params.weights.size(); ++l) {
    // Weight matrices written row by row, then the bias vector.
    const Mat& w = ckpt.params.weights[l];
    for (int r = 0; r < w.rows(); ++r) {
      std::vector<double> row(w.cols());
      for (int cidx = 0; cidx < w.cols(); ++cidx) row[cidx] = w(r, cidx);
      write_f64_le(os, row.data(), row.size());
    }
    const Vec& b = ckpt.params.biases[l];
    write_f64_le(os, b.data(), static_cast<size_t>(b.size()));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("checkpoint: missing header");
  std::istringstream hs(line);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != "DIFFPLAN-CKPT" || version != 1)
    throw std::runtime_error("checkpoint: bad magic/version in " + path);

  Checkpoint ckpt;
  NetConfig& c = ckpt.params.cfg;
  std::string layers_spec;
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("checkpoint: malformed header token " + tok);
    std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "H") c.plan_horizon = std::stoi(val);
    else if (key == "A") c.action_dim = std::stoi(val);
    else if (key == "T_o") c.obs_horizon = std::stoi(val);
    else if (key == "S") c.state_dim = std::stoi(val);
    else if (key == "E") c.time_embed_dim = std::stoi(val);
    else if (key == "K") ckpt.K = std::stoi(val);
    else if (key == "schedule") ckpt.schedule = schedule_kind_from_string(val);
    else if (key == "layers") layers_spec = val;
    else throw std::runtime_error("checkpoint: unknown header key " + key);
  }
  if (layers_spec.empty())
    throw std::runtime_error("checkpoint: header missing layers");

  std::vector<std::pair<int, int>> shapes;
  std::istringstream ls(layers_spec);
  std::string item;
  while (std::getline(ls, item, ',')) {
    auto x = item.find('x');
    if (x == std::string::npos)
      throw std::runtime_error("checkpoint: malformed layer shape " + item);
    shapes.emplace_back(std::stoi(item.substr(0, x)),
                        std::stoi(item.substr(x + 1)));
  }

  c.hidden.clear();
  for (size_t l = 0; l + 1 < shapes.size(); ++l)
    c.hidden.push_back(shapes[l].second);
  if (shapes.empty() || shapes.front().first != c.input_dim() ||
      shapes.back().second != c.output_dim())
    throw std::runtime_error("checkpoint: layer shapes inconsistent with dims");

  for (auto [in, out] : shapes) {
    Mat w(in, out);
    for (int r = 0; r < in; ++r) {
      std::vector<double> row(out);
      read_f64_le(is, row.data(), row.size());
      for (int cidx = 0; cidx < out; ++cidx) w(r, cidx) = row[cidx];
    }
    Vec b(out);
    read_f64_le(is, b.data(), static_cast<size_t>(out));
    ckpt.params.weights.push_back(std::move(w));
    ckpt.params.biases.push_back(std::move(b));
  }
  return ckpt;
}

}  // namespace diffplan
