#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "popinterp/errors.hpp"
#include "popinterp/random.hpp"
#include "popinterp/sampler.hpp"

namespace popinterp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Dual averaging of the log step size.
class StepSizeAdaptation {
 public:
  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  void learn(double& epsilon, double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    epsilon = std::exp(x);
  }
  void complete(double& epsilon) const { epsilon = std::exp(x_bar_); }
  void set_delta(double delta) { delta_ = delta; }

 private:
  double counter_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  double mu_ = 0.0;
  double delta_ = 0.8;
  double gamma_ = 0.05;
  double kappa_ = 0.75;
  double t0_ = 10.0;
};

// Fast/slow/fast warmup windows; slow windows double in length and each
// ends with a regularized variance estimate.
class VarianceAdaptation {
 public:
  VarianceAdaptation(std::size_t num_warmup, std::size_t dim)
      : num_warmup_(num_warmup), mean_(dim, 0.0), m2_(dim, 0.0) {
    // A longer closing window lets the final step size settle; with only 50
    // iterations the averaged step is biased small and acceptance overshoots.
    term_buffer_ = std::max<std::size_t>(50, num_warmup / 10);
    if (num_warmup < 20) {
      disabled_ = true;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > num_warmup) {
      init_buffer_ = static_cast<std::size_t>(0.15 * num_warmup);
      term_buffer_ = static_cast<std::size_t>(0.1 * num_warmup);
      base_window_ = num_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  bool learn(std::vector<double>& inv_metric, const std::vector<double>& q) {
    if (disabled_) return false;
    if (in_window()) add(q);
    if (counter_ == next_window_ && counter_ != num_warmup_) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      for (std::size_t i = 0; i < inv_metric.size(); ++i) {
        const double var = n > 1 ? m2_[i] / (n - 1.0) : 1.0;
        inv_metric[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
      }
      std::fill(mean_.begin(), mean_.end(), 0.0);
      std::fill(m2_.begin(), m2_.end(), 0.0);
      n_ = 0;
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ &&
           counter_ != num_warmup_;
  }
  void add(const std::vector<double>& q) {
    ++n_;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double delta = q[i] - mean_[i];
      mean_[i] += delta / static_cast<double>(n_);
      m2_[i] += delta * (q[i] - mean_[i]);
    }
  }
  void compute_next_window() {
    if (next_window_ == num_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != num_warmup_ - term_buffer_ - 1) {
      const std::size_t boundary = next_window_ + 2 * window_size_;
      if (boundary >= num_warmup_ - term_buffer_) next_window_ = num_warmup_ - term_buffer_ - 1;
    }
  }

  std::size_t num_warmup_;
  std::size_t init_buffer_ = 75;
  std::size_t term_buffer_ = 50;
  std::size_t base_window_ = 25;
  std::size_t window_size_ = 0;
  std::size_t next_window_ = 0;
  std::size_t counter_ = 0;
  bool disabled_ = false;
  std::size_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct PhasePoint {
  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> grad;
  double log_density = -kInf;
};

struct Transition {
  double accept_stat;
  int depth;
  int n_leapfrog;
  bool divergent;
  double energy_error;
};

class NutsChain {
 public:
  NutsChain(const LogDensity& target, const SamplerConfig& cfg, std::uint64_t seed)
      : target_(target), rng_(seed), dim_(target.dimension), inv_metric_(dim_, 1.0) {
    int depth = 0;
    while ((std::size_t{1} << (depth + 1)) <= cfg.max_leapfrog) ++depth;
    max_depth_ = std::max(depth, 1);
  }

  Rng& rng() { return rng_; }
  double step_size() const { return epsilon_; }
  double& step_size() { return epsilon_; }
  std::vector<double>& inverse_metric() { return inv_metric_; }
  const PhasePoint& state() const { return z_; }

  bool set_position(std::span<const double> q) {
    z_.q.assign(q.begin(), q.end());
    z_.p.assign(dim_, 0.0);
    z_.grad.assign(dim_, 0.0);
    evaluate(z_);
    return std::isfinite(z_.log_density) &&
           std::all_of(z_.grad.begin(), z_.grad.end(), [](double g) { return std::isfinite(g); });
  }

  // Doubles or halves epsilon until a single leapfrog step crosses an
  // acceptance probability of 0.8.
  void init_step_size() {
    const PhasePoint start = z_;
    sample_momentum(z_);
    double h0 = hamiltonian(z_);
    leapfrog(z_, epsilon_);
    double h = hamiltonian(z_);
    if (std::isnan(h)) h = kInf;
    const double log08 = std::log(0.8);
    const int direction = (h0 - h) > log08 ? 1 : -1;
    for (int iter = 0; iter < 100; ++iter) {
      z_ = start;
      sample_momentum(z_);
      h0 = hamiltonian(z_);
      leapfrog(z_, epsilon_);
      h = hamiltonian(z_);
      if (std::isnan(h)) h = kInf;
      const double delta_h = h0 - h;
      if (direction == 1 && !(delta_h > log08)) break;
      if (direction == -1 && !(delta_h < log08)) break;
      epsilon_ = direction == 1 ? 2.0 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7 || epsilon_ < 1e-12) break;
    }
    epsilon_ = std::clamp(epsilon_, 1e-12, 1e7);
    z_ = start;
  }

  Transition transition() {
    sample_momentum(z_);
    PhasePoint z_fwd = z_;
    PhasePoint z_bck = z_;
    PhasePoint z_sample = z_;
    PhasePoint z_propose = z_;

    std::vector<double> p_sharp0 = sharp(z_);
    std::vector<double> p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp0;
    std::vector<double> p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp0;
    std::vector<double> p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp0;
    std::vector<double> p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp0;

    std::vector<double> rho = z_.p;
    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z_);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    int depth = 0;
    divergent_ = false;

    while (depth < max_depth_) {
      std::vector<double> rho_fwd(dim_, 0.0);
      std::vector<double> rho_bck(dim_, 0.0);
      bool valid_subtree = false;
      double log_sum_weight_subtree = -kInf;

      if (rng_.uniform() > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid_subtree = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                                   p_fwd_bck, p_fwd_fwd, h0, epsilon_, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid_subtree = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                                   p_bck_fwd, p_bck_bck, h0, -epsilon_, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      for (std::size_t i = 0; i < dim_; ++i) rho[i] = rho_bck[i] + rho_fwd[i];
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      std::vector<double> rho_ext(dim_);
      for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_bck[i] + p_fwd_bck[i];
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_ext);
      for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_fwd[i] + p_bck_fwd[i];
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_ext);
      if (!persist) break;
    }

    z_ = z_sample;
    const double energy_error = hamiltonian(z_) - h0;
    return Transition{n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0, depth, n_leapfrog,
                      divergent_, energy_error};
  }

 private:
  void evaluate(PhasePoint& z) const {
    try {
      z.log_density = target_.evaluate(z.q, z.grad);
    } catch (const std::exception&) {
      z.log_density = -kInf;
    }
    if (std::isnan(z.log_density)) z.log_density = -kInf;
  }

  void sample_momentum(PhasePoint& z) {
    for (std::size_t i = 0; i < dim_; ++i) z.p[i] = rng_.normal() / std::sqrt(inv_metric_[i]);
  }

  std::vector<double> sharp(const PhasePoint& z) const {
    std::vector<double> s(dim_);
    for (std::size_t i = 0; i < dim_; ++i) s[i] = inv_metric_[i] * z.p[i];
    return s;
  }

  double hamiltonian(const PhasePoint& z) const {
    double kinetic = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) kinetic += inv_metric_[i] * z.p[i] * z.p[i];
    return -z.log_density + 0.5 * kinetic;
  }

  void leapfrog(PhasePoint& z, double eps) const {
    for (std::size_t i = 0; i < dim_; ++i) z.p[i] += 0.5 * eps * z.grad[i];
    for (std::size_t i = 0; i < dim_; ++i) z.q[i] += eps * inv_metric_[i] * z.p[i];
    evaluate(z);
    if (!std::isfinite(z.log_density)) return;
    for (std::size_t i = 0; i < dim_; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

  static bool criterion(const std::vector<double>& p_sharp_minus,
                        const std::vector<double>& p_sharp_plus, const std::vector<double>& rho) {
    return dot(p_sharp_plus, rho) > 0 && dot(p_sharp_minus, rho) > 0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho,
                  std::vector<double>& p_beg, std::vector<double>& p_end, double h0, double eps,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(z_, eps);
      ++n_leapfrog;
      double h = hamiltonian(z_);
      if (std::isnan(h) || !std::isfinite(z_.log_density)) h = kInf;
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += (h0 - h > 0) ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = sharp(z_);
      p_sharp_end = p_sharp_beg;
      for (std::size_t i = 0; i < dim_; ++i) rho[i] += z_.p[i];
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    double log_sum_weight_init = -kInf;
    std::vector<double> p_init_end(dim_), p_sharp_init_end(dim_), rho_init(dim_, 0.0);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, eps, n_leapfrog, log_sum_weight_init, sum_metro_prob)) {
      return false;
    }

    PhasePoint z_propose_final = z_;
    double log_sum_weight_final = -kInf;
    std::vector<double> p_final_beg(dim_), p_sharp_final_beg(dim_), rho_final(dim_, 0.0);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, eps, n_leapfrog, log_sum_weight_final,
                    sum_metro_prob)) {
      return false;
    }

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    std::vector<double> rho_subtree(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      rho_subtree[i] = rho_init[i] + rho_final[i];
      rho[i] += rho_subtree[i];
    }
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    std::vector<double> rho_ext(dim_);
    for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_init[i] + p_final_beg[i];
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_ext);
    for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_final[i] + p_init_end[i];
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_ext);
    return persist;
  }

  const LogDensity& target_;
  Rng rng_;
  std::size_t dim_;
  std::vector<double> inv_metric_;
  double epsilon_ = 1.0;
  int max_depth_ = 10;
  bool divergent_ = false;
  PhasePoint z_;
};

ChainResult run_chain(const LogDensity& target, const SamplerConfig& cfg, std::size_t chain,
                      std::span<const double> init) {
  NutsChain nuts(target, cfg, derive_seed(cfg.seed, chain));
  const std::size_t dim = target.dimension;

  bool ok = false;
  if (!init.empty()) {
    if (init.size() != dim) throw InitializationError("initial point has the wrong length");
    ok = nuts.set_position(init);
    if (!ok) throw InitializationError("target is not finite at the initial point");
  } else {
    std::vector<double> q(dim);
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      for (auto& v : q) v = cfg.init_radius * (2.0 * nuts.rng().uniform() - 1.0);
      ok = nuts.set_position(q);
    }
    if (!ok) {
      throw InitializationError("no finite starting point found after 100 random attempts");
    }
  }

  StepSizeAdaptation step_adapt;
  step_adapt.set_delta(cfg.target_accept);
  VarianceAdaptation var_adapt(cfg.warmup, dim);
  const bool adapt_metric = cfg.mass_matrix == MassMatrix::diagonal_adaptive;

  nuts.init_step_size();
  step_adapt.set_mu(std::log(10.0 * nuts.step_size()));
  step_adapt.restart();

  for (std::size_t it = 0; it < cfg.warmup; ++it) {
    const Transition t = nuts.transition();
    step_adapt.learn(nuts.step_size(), t.accept_stat);
    if (adapt_metric && var_adapt.learn(nuts.inverse_metric(), nuts.state().q)) {
      nuts.init_step_size();
      step_adapt.set_mu(std::log(10.0 * nuts.step_size()));
      step_adapt.restart();
    }
  }
  if (cfg.warmup > 0) step_adapt.complete(nuts.step_size());

  ChainResult out;
  out.draws.reserve(cfg.draws * dim);
  for (std::size_t it = 0; it < cfg.draws; ++it) {
    const Transition t = nuts.transition();
    const auto& q = nuts.state().q;
    out.draws.insert(out.draws.end(), q.begin(), q.end());
    out.log_density.push_back(nuts.state().log_density);
    out.accept_stat.push_back(t.accept_stat);
    out.tree_depth.push_back(t.depth);
    out.n_leapfrog.push_back(t.n_leapfrog);
    out.divergent.push_back(t.divergent ? 1 : 0);
    out.energy_error.push_back(t.energy_error);
    if (t.divergent) ++out.divergences;
  }
  out.step_size = nuts.step_size();
  out.inverse_metric = nuts.inverse_metric();
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1 || warmup < 1 || draws < 1 || max_leapfrog < 1) {
    throw DomainError("sampler counts must all be at least 1");
  }
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw DomainError("target acceptance must lie in (0, 1)");
  }
  if (!(init_radius > 0.0)) throw DomainError("init radius must be positive");
}

std::span<const double> PosteriorDraws::draw(std::size_t m) const {
  const auto& c = chains[m / draws_per_chain];
  return std::span<const double>(c.draws).subspan((m % draws_per_chain) * dimension, dimension);
}

std::vector<std::vector<double>> PosteriorDraws::coordinate(std::size_t coord) const {
  std::vector<std::vector<double>> out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    out[c].resize(draws_per_chain);
    for (std::size_t i = 0; i < draws_per_chain; ++i) out[c][i] = at(c, i, coord);
  }
  return out;
}

std::size_t PosteriorDraws::divergences() const {
  std::size_t n = 0;
  for (const auto& c : chains) n += c.divergences;
  return n;
}

PosteriorDraws run_hmc(const LogDensity& target, const SamplerConfig& cfg,
                       std::span<const double> init) {
  cfg.validate();
  if (target.dimension == 0) throw DomainError("target dimension must be at least 1");
  PosteriorDraws pd;
  pd.dimension = target.dimension;
  pd.draws_per_chain = cfg.draws;
  pd.chains.resize(cfg.chains);

  if (!cfg.parallel_chains || cfg.chains == 1) {
    for (std::size_t c = 0; c < cfg.chains; ++c) pd.chains[c] = run_chain(target, cfg, c, init);
    return pd;
  }
  std::vector<std::exception_ptr> errors(cfg.chains);
  std::vector<std::thread> workers;
  workers.reserve(cfg.chains);
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    workers.emplace_back([&, c] {
      try {
        pd.chains[c] = run_chain(target, cfg, c, init);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return pd;
}

}  // namespace popinterp
