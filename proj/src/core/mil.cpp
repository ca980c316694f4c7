// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "mil.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace milr {

using nlohmann::json;

void validate_bag(const Bag &bag) {
  MILR_REQUIRE(bag.instances.rows() >= 1, ErrorCode::InvalidArgument,
               "bag " + bag.bag_id + " has no instances");
  MILR_REQUIRE(bag.instances.allFinite(), ErrorCode::NonFiniteValue,
               "bag " + bag.bag_id + " has non-finite features");
  MILR_REQUIRE(bag.weight > 0.0 && std::isfinite(bag.weight),
               ErrorCode::InvalidArgument,
               "bag " + bag.bag_id + " weight must be positive");
  MILR_REQUIRE(bag.label == 0 || bag.label == 1, ErrorCode::InvalidArgument,
               "bag " + bag.bag_id + " label must be 0 or 1");
}

MilParams MilParams::zeros(const MilDims &dims) {
  MILR_REQUIRE(dims.d >= 1 && dims.h1 >= 1 && dims.h2 >= 1 && dims.attention >= 1,
               ErrorCode::InvalidArgument, "network dimensions must be positive");
  MilParams p;
  p.dims = dims;
  p.W1 = Eigen::MatrixXd::Zero(dims.h1, dims.d);
  p.b1 = Eigen::VectorXd::Zero(dims.h1);
  p.W2 = Eigen::MatrixXd::Zero(dims.h2, dims.h1);
  p.b2 = Eigen::VectorXd::Zero(dims.h2);
  p.V = Eigen::MatrixXd::Zero(dims.attention, dims.h2);
  if (dims.gated)
    p.U = Eigen::MatrixXd::Zero(dims.attention, dims.h2);
  p.w = Eigen::VectorXd::Zero(dims.attention);
  p.u = Eigen::VectorXd::Zero(dims.h2);
  p.c = 0.0;
  return p;
}

std::size_t MilParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block([&](std::string_view, const double *, std::size_t k) { n += k; });
  return n;
}

MilParams init_params(const MilDims &dims, std::uint64_t seed) {
  MilParams p = MilParams::zeros(dims);
  Rng rng(seed);
  auto fill = [&](double *data, std::size_t n, double bound) {
    for (std::size_t i = 0; i < n; ++i)
      data[i] = rng.uniform(-bound, bound);
  };
  const double he1 = std::sqrt(6.0 / dims.d);
  const double he2 = std::sqrt(6.0 / dims.h1);
  const double xv = std::sqrt(6.0 / (dims.h2 + dims.attention));
  fill(p.W1.data(), p.W1.size(), he1);
  fill(p.W2.data(), p.W2.size(), he2);
  fill(p.V.data(), p.V.size(), xv);
  if (dims.gated)
    fill(p.U.data(), p.U.size(), xv);
  fill(p.w.data(), p.w.size(), std::sqrt(6.0 / (dims.attention + 1)));
  fill(p.u.data(), p.u.size(), std::sqrt(6.0 / (dims.h2 + 1)));
  return p;
}

namespace {

double sigmoid(double s) {
  if (s >= 0.0)
    return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

} // namespace

ForwardResult forward(const Eigen::MatrixXd &x, const MilParams &params) {
  const MilDims &dm = params.dims;
  MILR_REQUIRE(x.cols() == dm.d, ErrorCode::DimensionMismatch,
               "instance dimension " + std::to_string(x.cols()) +
                   " does not match model d=" + std::to_string(dm.d));
  MILR_REQUIRE(x.rows() >= 1, ErrorCode::InvalidArgument, "empty bag");
  ForwardResult r;
  ForwardCache &c = r.cache;
  c.x = x;
  c.q1 = (x * params.W1.transpose()).rowwise() + params.b1.transpose();
  c.h1 = c.q1.cwiseMax(0.0);
  c.q2 = (c.h1 * params.W2.transpose()).rowwise() + params.b2.transpose();
  c.h = c.q2.cwiseMax(0.0);
  c.t = (c.h * params.V.transpose()).array().tanh().matrix();
  if (dm.gated) {
    c.g = (c.h * params.U.transpose())
              .unaryExpr([](double v) { return sigmoid(v); });
    c.e = c.t.cwiseProduct(c.g) * params.w;
  } else {
    c.e = c.t * params.w;
  }
  const double emax = c.e.maxCoeff();
  c.a = (c.e.array() - emax).exp().matrix();
  c.a /= c.a.sum();
  c.z = c.h.transpose() * c.a;
  c.s = params.u.dot(c.z) + params.c;
  c.p = sigmoid(c.s);
  r.p = c.p;
  r.attention = c.a;
  return r;
}

Eigen::VectorXd instance_logits(const ForwardCache &cache,
                                const MilParams &params) {
  return (cache.h * params.u).array() + params.c;
}

double loss_wbce(double p, int y, double weight) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -weight * (y == 1 ? std::log(pc) : std::log(1.0 - pc));
}

MilGradients backward(const ForwardCache &c, const MilParams &params, int y,
                      double weight) {
  const MilDims &dm = params.dims;
  MilGradients g = MilParams::zeros(dm);
  const double ds = weight * (c.p - static_cast<double>(y));
  if (ds == 0.0)
    return g;

  g.c = ds;
  g.u = ds * c.z;
  const Eigen::VectorXd dz = ds * params.u;

  // z = H^T a
  Eigen::MatrixXd dh = c.a * dz.transpose();
  const Eigen::VectorXd da = c.h * dz;

  // a = softmax(e)
  const double mean_da = c.a.dot(da);
  const Eigen::VectorXd de = c.a.cwiseProduct((da.array() - mean_da).matrix());

  g.w.setZero();
  if (dm.gated) {
    const Eigen::MatrixXd gated = c.t.cwiseProduct(c.g);
    g.w = gated.transpose() * de;
    const Eigen::MatrixXd dgated = de * params.w.transpose();
    const Eigen::MatrixXd dpv =
        dgated.cwiseProduct(c.g).cwiseProduct((1.0 - c.t.array().square()).matrix());
    const Eigen::MatrixXd dpu = dgated.cwiseProduct(c.t).cwiseProduct(
        c.g.cwiseProduct((1.0 - c.g.array()).matrix()));
    g.V = dpv.transpose() * c.h;
    g.U = dpu.transpose() * c.h;
    dh.noalias() += dpv * params.V + dpu * params.U;
  } else {
    g.w = c.t.transpose() * de;
    const Eigen::MatrixXd dp =
        (de * params.w.transpose()).cwiseProduct((1.0 - c.t.array().square()).matrix());
    g.V = dp.transpose() * c.h;
    dh.noalias() += dp * params.V;
  }

  // h = ReLU(q2)
  const Eigen::MatrixXd dq2 =
      (c.q2.array() > 0.0).select(dh, Eigen::MatrixXd::Zero(dh.rows(), dh.cols()));
  g.W2 = dq2.transpose() * c.h1;
  g.b2 = dq2.colwise().sum().transpose();
  const Eigen::MatrixXd dh1 = dq2 * params.W2;
  const Eigen::MatrixXd dq1 =
      (c.q1.array() > 0.0).select(dh1, Eigen::MatrixXd::Zero(dh1.rows(), dh1.cols()));
  g.W1 = dq1.transpose() * c.x;
  g.b1 = dq1.colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------

void validate(const TrainConfig &cfg) {
  MILR_REQUIRE(cfg.lr_min > 0.0 && cfg.lr_min <= cfg.lr_max,
               ErrorCode::InvalidArgument, "need 0 < lr_min <= lr_max");
  MILR_REQUIRE(cfg.epochs >= 1, ErrorCode::InvalidArgument, "epochs must be >= 1");
  MILR_REQUIRE(cfg.cycle_steps == 0 || cfg.cycle_steps >= 2,
               ErrorCode::InvalidArgument, "cycle_steps must be 0 (auto) or >= 2");
  MILR_REQUIRE(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 &&
                   cfg.beta2 < 1.0 && cfg.eps > 0.0,
               ErrorCode::InvalidArgument, "invalid Adam hyperparameters");
  MILR_REQUIRE(cfg.patience >= 0, ErrorCode::InvalidArgument,
               "patience must be >= 0");
}

double cyclic_lr(std::int64_t step, double lr_min, double lr_max,
                 std::int64_t cycle_steps) {
  MILR_REQUIRE(cycle_steps >= 2, ErrorCode::InvalidArgument,
               "cycle_steps must be >= 2");
  std::int64_t r = step % cycle_steps;
  if (r < 0)
    r += cycle_steps;
  const double frac = static_cast<double>(r) / static_cast<double>(cycle_steps);
  return lr_min + (lr_max - lr_min) * (1.0 - std::abs(2.0 * frac - 1.0));
}

AdamState AdamState::zeros(const MilDims &dims) {
  return AdamState{MilParams::zeros(dims), MilParams::zeros(dims), 0};
}

void adam_step(MilParams &params, const MilGradients &grads, AdamState &state,
               double lr, double beta1, double beta2, double eps) {
  MILR_REQUIRE(params.dims == grads.dims && params.dims == state.m.dims,
               ErrorCode::DimensionMismatch, "Adam shapes do not match");
  grads.for_each_block([](std::string_view name, const double *g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(g[i]))
        fail(ErrorCode::NonFiniteGradient,
             "non-finite gradient in block " + std::string(name));
  });
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  std::vector<const double *> gs;
  grads.for_each_block([&](std::string_view, const double *g, std::size_t) { gs.push_back(g); });
  std::vector<double *> ms, vs;
  state.m.for_each_block([&](std::string_view, double *m, std::size_t) { ms.push_back(m); });
  state.v.for_each_block([&](std::string_view, double *v, std::size_t) { vs.push_back(v); });
  std::size_t b = 0;
  params.for_each_block([&](std::string_view, double *p, std::size_t n) {
    const double *g = gs[b];
    double *m = ms[b];
    double *v = vs[b];
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    ++b;
  });
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd InputNorm::apply(const Eigen::MatrixXd &x) const {
  if (empty())
    return x;
  MILR_REQUIRE(x.cols() == mean.size(), ErrorCode::DimensionMismatch,
               "instance dimension does not match the input normalization");
  return ((x.rowwise() - mean.transpose()).array().rowwise() *
          scale.transpose().array())
      .matrix();
}

InputNorm InputNorm::fit(const std::vector<Bag> &bags) {
  InputNorm n;
  if (bags.empty())
    return n;
  const Eigen::Index d = bags.front().instances.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  double count = 0.0;
  for (const auto &b : bags) {
    MILR_REQUIRE(b.instances.cols() == d, ErrorCode::DimensionMismatch,
                 "bags have differing feature dimensions");
    sum += b.instances.colwise().sum().transpose();
    sq += b.instances.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(b.instances.rows());
  }
  n.mean = sum / count;
  n.scale.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = std::max(0.0, sq[j] / count - n.mean[j] * n.mean[j]);
    const double sd = std::sqrt(var);
    n.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return n;
}

ForwardResult MilModel::predict(const Eigen::MatrixXd &instances) const {
  return forward(norm.apply(instances), params);
}

double mean_loss(const MilModel &model, const std::vector<Bag> &bags) {
  if (bags.empty())
    return 0.0;
  double total = 0.0;
  for (const auto &b : bags)
    total += loss_wbce(model.probability(b.instances), b.label, b.weight);
  return total / static_cast<double>(bags.size());
}

MilModel train(const std::vector<Bag> &training,
               const std::vector<Bag> &validation, const TrainConfig &cfg) {
  validate(cfg);
  MILR_REQUIRE(!training.empty(), ErrorCode::SingleClassTraining,
               "no training bags");
  bool has0 = false, has1 = false;
  for (const auto &b : training) {
    validate_bag(b);
    MILR_REQUIRE(b.instances.cols() == cfg.dims.d, ErrorCode::DimensionMismatch,
                 "bag " + b.bag_id + " has d=" +
                     std::to_string(b.instances.cols()) + ", model expects " +
                     std::to_string(cfg.dims.d));
    (b.label == 1 ? has1 : has0) = true;
  }
  MILR_REQUIRE(has0 && has1, ErrorCode::SingleClassTraining,
               "training bags contain a single class");
  for (const auto &b : validation)
    validate_bag(b);

  MilModel model;
  model.train_config = cfg;
  model.norm = InputNorm::fit(training);
  model.params = init_params(cfg.dims, derive_seed(cfg.seed, 0));

  std::vector<Bag> train_n = training;
  for (auto &b : train_n)
    b.instances = model.norm.apply(b.instances);
  std::vector<Bag> val_n = validation;
  for (auto &b : val_n)
    b.instances = model.norm.apply(b.instances);

  const std::int64_t cycle =
      cfg.cycle_steps > 0 ? cfg.cycle_steps
                          : std::max<std::int64_t>(2, 2 * static_cast<std::int64_t>(train_n.size()));
  AdamState adam = AdamState::zeros(cfg.dims);
  MilParams best = model.params;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::int64_t step = 0;
  std::vector<std::size_t> order(train_n.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, 1 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double train_loss = 0.0;
    double lr = cfg.lr_min;
    for (std::size_t idx : order) {
      const Bag &b = train_n[idx];
      const ForwardResult fr = forward(b.instances, model.params);
      train_loss += loss_wbce(fr.p, b.label, b.weight);
      const MilGradients g = backward(fr.cache, model.params, b.label, b.weight);
      lr = cyclic_lr(step, cfg.lr_min, cfg.lr_max, cycle);
      adam_step(model.params, g, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
      ++step;
    }
    train_loss /= static_cast<double>(train_n.size());

    double val_loss = 0.0;
    for (const auto &b : val_n)
      val_loss += loss_wbce(forward(b.instances, model.params).p, b.label, b.weight);
    if (!val_n.empty())
      val_loss /= static_cast<double>(val_n.size());
    const double criterion = val_n.empty() ? train_loss : val_loss;

    EpochLog entry{epoch, train_loss, val_n.empty() ? train_loss : val_loss, lr, false};
    if (criterion < best_loss) {
      best_loss = criterion;
      best = model.params;
      best_epoch = epoch;
    }
    model.log.push_back(entry);
    if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience)
      break;
  }
  if (best_epoch >= 0)
    model.log[static_cast<std::size_t>(best_epoch)].selected = true;
  model.params = std::move(best);
  return model;
}

// ---------------------------------------------------------------------------

namespace {

json matrix_json(const Eigen::MatrixXd &m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd &v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out.push_back(v[i]);
  return out;
}

void matrix_from(const json &j, Eigen::MatrixXd &m, const char *name) {
  MILR_REQUIRE(j.is_array() && static_cast<Eigen::Index>(j.size()) == m.rows(),
               ErrorCode::DimensionMismatch,
               std::string("checkpoint block ") + name + " has wrong row count");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const json &row = j[static_cast<std::size_t>(i)];
    MILR_REQUIRE(row.is_array() && static_cast<Eigen::Index>(row.size()) == m.cols(),
                 ErrorCode::DimensionMismatch,
                 std::string("checkpoint block ") + name + " has wrong column count");
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
}

void vector_from(const json &j, Eigen::VectorXd &v, const char *name) {
  MILR_REQUIRE(j.is_array() && static_cast<Eigen::Index>(j.size()) == v.size(),
               ErrorCode::DimensionMismatch,
               std::string("checkpoint block ") + name + " has wrong length");
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
}

} // namespace

std::string model_to_json(const MilModel &model) {
  const MilParams &p = model.params;
  const MilDims &d = p.dims;
  json params = {{"W1", matrix_json(p.W1)}, {"b1", vector_json(p.b1)},
                 {"W2", matrix_json(p.W2)}, {"b2", vector_json(p.b2)},
                 {"V", matrix_json(p.V)},   {"w", vector_json(p.w)},
                 {"u", vector_json(p.u)},   {"c", p.c}};
  if (d.gated)
    params["U"] = matrix_json(p.U);
  const TrainConfig &t = model.train_config;
  json weights = json::object();
  for (const auto &[label, w] : t.class_weights)
    weights[std::to_string(label)] = w;
  json log = json::array();
  for (const auto &e : model.log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_loss", e.val_loss},
                   {"lr", e.lr},
                   {"selected", e.selected}});
  json j = {
      {"version", 1},
      {"dims", {{"d", d.d}, {"h1", d.h1}, {"h2", d.h2}, {"L", d.attention}, {"gated", d.gated}}},
      {"params", params},
      {"input_norm",
       {{"mean", vector_json(model.norm.mean)}, {"scale", vector_json(model.norm.scale)}}},
      {"train_config",
       {{"lr_min", t.lr_min},
        {"lr_max", t.lr_max},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"eps", t.eps},
        {"epochs", t.epochs},
        {"cycle_steps", t.cycle_steps},
        {"patience", t.patience},
        {"seed", t.seed},
        {"class_weights", weights}}},
      {"log", log}};
  return j.dump() + "\n";
}

MilModel model_from_json(const std::string &text) {
  MilModel m;
  try {
    const json j = json::parse(text);
    MILR_REQUIRE(j.at("version").get<int>() == 1, ErrorCode::VersionMismatch,
                 "unsupported model checkpoint version");
    const json &jd = j.at("dims");
    MilDims d;
    d.d = jd.at("d").get<int>();
    d.h1 = jd.at("h1").get<int>();
    d.h2 = jd.at("h2").get<int>();
    d.attention = jd.at("L").get<int>();
    d.gated = jd.value("gated", false);
    m.params = MilParams::zeros(d);
    const json &jp = j.at("params");
    matrix_from(jp.at("W1"), m.params.W1, "W1");
    vector_from(jp.at("b1"), m.params.b1, "b1");
    matrix_from(jp.at("W2"), m.params.W2, "W2");
    vector_from(jp.at("b2"), m.params.b2, "b2");
    matrix_from(jp.at("V"), m.params.V, "V");
    if (d.gated)
      matrix_from(jp.at("U"), m.params.U, "U");
    vector_from(jp.at("w"), m.params.w, "w");
    vector_from(jp.at("u"), m.params.u, "u");
    m.params.c = jp.at("c").get<double>();
    if (j.contains("input_norm")) {
      const auto &mean = j["input_norm"].at("mean");
      if (!mean.empty()) {
        m.norm.mean.resize(static_cast<Eigen::Index>(mean.size()));
        m.norm.scale.resize(static_cast<Eigen::Index>(mean.size()));
        vector_from(mean, m.norm.mean, "input_norm.mean");
        vector_from(j["input_norm"].at("scale"), m.norm.scale, "input_norm.scale");
      }
    }
    const json &jt = j.at("train_config");
    TrainConfig &t = m.train_config;
    t.lr_min = jt.at("lr_min").get<double>();
    t.lr_max = jt.at("lr_max").get<double>();
    t.beta1 = jt.at("beta1").get<double>();
    t.beta2 = jt.at("beta2").get<double>();
    t.eps = jt.at("eps").get<double>();
    t.epochs = jt.at("epochs").get<int>();
    t.cycle_steps = jt.at("cycle_steps").get<int>();
    t.patience = jt.value("patience", 0);
    t.seed = jt.at("seed").get<std::uint64_t>();
    t.dims = d;
    t.class_weights.clear();
    for (const auto &[k, v] : jt.at("class_weights").items())
      t.class_weights[std::stoi(k)] = v.get<double>();
    for (const auto &e : j.at("log"))
      m.log.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                       e.at("val_loss").get<double>(), e.at("lr").get<double>(),
                       e.at("selected").get<bool>()});
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, std::string("model checkpoint: ") + e.what());
  }
  MILR_REQUIRE(m.params.W1.allFinite() && m.params.W2.allFinite() &&
                   m.params.V.allFinite() && std::isfinite(m.params.c),
               ErrorCode::NonFiniteValue, "model checkpoint has non-finite values");
  return m;
}

void save_model(const MilModel &model, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << model_to_json(model);
}

MilModel load_model(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

} // namespace milr
