#include "sotmle/learners.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

namespace sotmle {

DesignTerm DesignTerm::intercept() {
    return {"(intercept)", [](std::span<const double>) { return 1.0; }};
}

DesignTerm DesignTerm::identity(std::size_t j) {
    return {"w" + std::to_string(j + 1), [j](std::span<const double> w) { return w[j]; }};
}

DesignTerm DesignTerm::exp_of(std::size_t j) {
    return {"exp(w" + std::to_string(j + 1) + ")",
            [j](std::span<const double> w) { return std::exp(w[j]); }};
}

Design main_terms_design(std::size_t dim) {
    Design d{DesignTerm::intercept()};
    for (std::size_t j = 0; j < dim; ++j) d.push_back(DesignTerm::identity(j));
    return d;
}

LogisticFit::LogisticFit(Design design, std::vector<double> coefficients,
                         std::vector<double> std_errors, int iterations)
    : design_(std::move(design)),
      coef_(std::move(coefficients)),
      se_(std::move(std_errors)),
      iterations_(iterations) {}

double LogisticFit::linear_predictor(std::span<const double> w) const {
    double eta = 0.0;
    for (std::size_t k = 0; k < coef_.size(); ++k) eta += coef_[k] * design_[k].f(w);
    return eta;
}

Predictor LogisticFit::predictor() const {
    return [fit = *this](std::span<const double> w) { return fit(w); };
}

namespace {

constexpr double kPerfectFit = 1e-6;

struct Problem {
    Eigen::MatrixXd x;
    Eigen::VectorXd r;
};

Problem build_problem(const Dataset& data, const LearnerSpec& spec) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (spec.target == LearnerTarget::Missingness || data.observed(i)) rows.push_back(i);
    }
    if (rows.empty()) {
        throw TmleError("no rows available to fit the learner");
    }
    const auto m = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(spec.design.size());
    Problem prob{Eigen::MatrixXd(m, p), Eigen::VectorXd(m)};
    for (Eigen::Index i = 0; i < m; ++i) {
        const std::size_t row = rows[static_cast<std::size_t>(i)];
        const auto w = data.w(row);
        for (Eigen::Index k = 0; k < p; ++k) {
            const double v = spec.design[static_cast<std::size_t>(k)].f(w);
            if (!std::isfinite(v)) {
                throw TmleError("design column '" + spec.design[static_cast<std::size_t>(k)].name +
                                "' is not finite on the data");
            }
            prob.x(i, k) = v;
        }
        prob.r(i) = spec.target == LearnerTarget::Missingness ? data.a(row) : data.y(row);
    }
    return prob;
}

Eigen::Index rank_of(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd scaled = x;
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const double norm = x.col(k).norm();
        if (norm > 0.0) scaled.col(k) /= norm;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    qr.setThreshold(1e-10);
    return qr.rank();
}

void check_rank(const Problem& prob, const Design& design) {
    if (rank_of(prob.x) == prob.x.cols()) return;
    for (Eigen::Index k = 1; k <= prob.x.cols(); ++k) {
        if (rank_of(prob.x.leftCols(k)) < k) {
            throw TmleError("rank-deficient design at column '" +
                            design[static_cast<std::size_t>(k - 1)].name + "'");
        }
    }
    throw TmleError("rank-deficient design");
}

double neg_log_lik(const Eigen::VectorXd& eta, const Eigen::VectorXd& r) {
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = eta(i);
        const double soft = std::log1p(std::exp(-std::abs(e))) + std::max(e, 0.0);  // log(1+e^eta)
        acc.add(soft - r(i) * e);
    }
    return acc.value();
}

}  // namespace

LogisticFit fit_logistic(const Dataset& data, const LearnerSpec& spec, double tol, int max_iter) {
    if (spec.design.empty()) {
        throw TmleError("empty design");
    }
    const Problem prob = build_problem(data, spec);
    check_rank(prob, spec.design);
    const Eigen::Index m = prob.x.rows();
    const Eigen::Index p = prob.x.cols();

    // column scales for the separation check; constant columns are not scaled
    Eigen::VectorXd scale(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double mean = prob.x.col(k).mean();
        const double sd = std::sqrt((prob.x.col(k).array() - mean).square().sum() /
                                    std::max<double>(1.0, static_cast<double>(m - 1)));
        scale(k) = sd > 0.0 ? sd : 0.0;
    }
    auto separated = [&](const Eigen::VectorXd& beta) {
        return beta.cwiseProduct(scale).norm() > kLogisticSeparationBound;
    };

    const bool binary = (prob.r.array() == 0.0 || prob.r.array() == 1.0).all();

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta = prob.x * beta;
    double nll = neg_log_lik(eta, prob.r);
    Eigen::MatrixXd info(p, p);
    for (int iter = 0; iter <= max_iter; ++iter) {
        Eigen::VectorXd mu(m);
        Eigen::VectorXd v(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            mu(i) = expit(eta(i));
            v(i) = mu(i) * (1.0 - mu(i));
        }
        const Eigen::VectorXd score = prob.x.transpose() * (prob.r - mu);
        info = prob.x.transpose() * v.asDiagonal() * prob.x;
        if (score.cwiseAbs().maxCoeff() <= tol * static_cast<double>(m)) {
            // binary responses predicted perfectly: the likelihood has no finite maximizer
            if (binary && (prob.r - mu).cwiseAbs().maxCoeff() < kPerfectFit) {
                throw TmleError("separation in logistic fit");
            }
            const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
            std::vector<double> se(static_cast<std::size_t>(p));
            for (Eigen::Index k = 0; k < p; ++k) se[static_cast<std::size_t>(k)] = std::sqrt(cov(k, k));
            return LogisticFit(spec.design, {beta.data(), beta.data() + p}, std::move(se), iter);
        }
        if (iter == max_iter) break;
        const Eigen::VectorXd step = info.ldlt().solve(score);
        if (!step.allFinite()) {
            throw TmleError("singular information matrix in logistic fit");
        }
        double t = 1.0;
        Eigen::VectorXd trial = beta + step;
        Eigen::VectorXd trial_eta = prob.x * trial;
        double trial_nll = neg_log_lik(trial_eta, prob.r);
        for (int h = 0; h < 40 && trial_nll > nll + 1e-12 * std::abs(nll); ++h) {
            t *= 0.5;
            trial = beta + t * step;
            trial_eta = prob.x * trial;
            trial_nll = neg_log_lik(trial_eta, prob.r);
        }
        if (separated(trial)) {
            throw TmleError("separation in logistic fit");
        }
        if ((trial - beta).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + beta.cwiseAbs().maxCoeff())) {
            // stalled at round-off; accept the current iterate
            beta = trial;
            eta = trial_eta;
            const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
            std::vector<double> se(static_cast<std::size_t>(p));
            for (Eigen::Index k = 0; k < p; ++k) se[static_cast<std::size_t>(k)] = std::sqrt(cov(k, k));
            return LogisticFit(spec.design, {beta.data(), beta.data() + p}, std::move(se), iter + 1);
        }
        beta = trial;
        eta = trial_eta;
        nll = trial_nll;
    }
    throw TmleError("logistic fit did not converge");
}

PerturbedPredictor::PerturbedPredictor(LogisticFit base, double rate, std::size_t n, double u,
                                       double v)
    : base_(std::move(base)), rate_(rate), n_(n), u_(u), v_(v) {}

PerturbedPredictor::PerturbedPredictor(LogisticFit base, double rate, std::size_t n,
                                       std::uint64_t key)
    : base_(std::move(base)),
      rate_(rate),
      n_(n),
      u_(1.0),
      v_(0.0),
      scope_(PerturbationScope::PerUnit),
      key_(key) {}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// strictly inside (0, 1)
double open_unit(std::uint64_t h) { return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53; }

}  // namespace

std::pair<double, double> PerturbedPredictor::draw_at(std::span<const double> w) const {
    if (scope_ == PerturbationScope::PerFit) return {u_, v_};
    const double scale = std::pow(static_cast<double>(n_), -rate_);
    if (!(scale > 0.0)) return {1.0, 0.0};
    std::uint64_t h = splitmix64(key_);
    for (double x : w) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(x == 0.0 ? 0.0 : x));
    const double u = 1.0 - scale * open_unit(splitmix64(h ^ 1));
    const double z = boost::math::quantile(boost::math::normal(), open_unit(splitmix64(h ^ 2)));
    return {u, 3.0 * scale + scale * z};
}

double PerturbedPredictor::linear_predictor(std::span<const double> w) const {
    const auto [u, v] = draw_at(w);
    return base_.linear_predictor(w) * u - v;
}

Predictor PerturbedPredictor::predictor() const {
    return [p = *this](std::span<const double> w) { return p(w); };
}

PerturbedPredictor perturb(const LogisticFit& base, double rate, std::size_t n,
                           std::mt19937_64& rng, PerturbationScope scope) {
    if (!(rate >= 0.0)) {
        throw TmleError("perturbation rate must be nonnegative");
    }
    if (scope == PerturbationScope::PerUnit) {
        return PerturbedPredictor(base, rate, n, rng());
    }
    const double scale = std::pow(static_cast<double>(n), -rate);
    if (!(scale > 0.0)) {
        return PerturbedPredictor(base, rate, n, 1.0, 0.0);
    }
    std::uniform_real_distribution<double> unif(1.0 - scale, 1.0);
    std::normal_distribution<double> gauss(3.0 * scale, scale);
    const double u = unif(rng);
    const double v = gauss(rng);
    return PerturbedPredictor(base, rate, n, u, v);
}

Predictor constant_learner(double level) {
    if (!(level > 0.0 && level <= 1.0)) {
        throw TmleError("constant learner level must lie in (0, 1]");
    }
    return [level](std::span<const double>) { return level; };
}

GlmLearner::GlmLearner() : factory_(main_terms_design) {}

GlmLearner::GlmLearner(DesignFactory factory) : factory_(std::move(factory)) {}

Predictor GlmLearner::fit(const Dataset& data, LearnerTarget target) const {
    if (target == LearnerTarget::Missingness && data.observed_count() == data.size()) {
        // no missingness: the MLE of g sits on the boundary
        return constant_learner(1.0);
    }
    return fit_logistic(data, {factory_(data.dim()), target}).predictor();
}

Predictor MeanLearner::fit(const Dataset& data, LearnerTarget target) const {
    data.require_estimable();
    if (target == LearnerTarget::Missingness) {
        return constant_learner(data.mean_a());
    }
    CompensatedSum acc;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.observed(i)) acc.add(data.y(i));
    }
    const double level = acc.value() / static_cast<double>(data.observed_count());
    return [level](std::span<const double>) { return level; };
}

std::unique_ptr<Learner> make_learner(const std::string& name) {
    if (name == "glm") return std::make_unique<GlmLearner>();
    if (name == "mean") return std::make_unique<MeanLearner>();
    throw TmleError("unknown learner '" + name + "'");
}

NuisancePair fit_nuisance(const Dataset& data, const Learner& outcome_learner,
                          const Learner& missingness_learner) {
    data.require_estimable();
    return {outcome_learner.fit(data, LearnerTarget::OutcomeGivenObserved),
            missingness_learner.fit(data, LearnerTarget::Missingness)};
}

}  // namespace sotmle
