#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "coreplan/diagnostics.hpp"
#include "coreplan/planner.hpp"
#include "support.hpp"

using namespace coreplan;
using coreplan::testing::median;
using coreplan::testing::random_vector;

namespace {

PlannerConfig small_config(std::uint64_t T, std::uint64_t K, double D, std::uint64_t seed) {
    PlannerConfig c;
    c.T = T;
    c.K = K;
    c.eta = 0.05;
    c.beta = 0.3;
    c.alpha = 0.2;
    c.D_gamma = D;
    c.seed = seed;
    return c;
}

// pi(a|x) proportional to exp(beta <phi(x,a), Theta>), computed with Eigen only.
Matrix softmax_table(const FeatureMap& phi, Index A, double beta, const Vector& theta_cum) {
    const Vector logits = beta * (phi.phi * theta_cum);
    const Index X = phi.num_pairs() / A;
    Matrix p(X, A);
    for (Index x = 0; x < X; ++x) {
        const Eigen::VectorXd row = logits.segment(x * A, A);
        const Eigen::ArrayXd e = (row.array() - row.maxCoeff()).exp();
        p.row(x) = (e / e.sum()).matrix().transpose();
    }
    return p;
}

// Two states, one action, uniform transitions and initial law, tabular
// features, full core set. With lambda uniform the exact theta-gradient is 0.
struct SymmetricInstance {
    Mdp mdp;
    FeatureMap phi = FeatureMap::tabular(2);
    CoreSet core;

    SymmetricInstance() {
        mdp.num_states = 2;
        mdp.num_actions = 1;
        mdp.gamma = 0.5;
        mdp.nu0 = Vector::Constant(2, 0.5);
        mdp.reward = (Vector(2) << 0.0, 1.0).finished();
        mdp.transition = Matrix::Constant(2, 2, 0.5);
        core = compute_core_residual(phi, {0, 1}, Matrix::Identity(2, 2));
    }
};

}  // namespace

TEST_CASE("project_ball") {
    const Vector p = project_ball((Vector(2) << 3, 4).finished(), 1.0);
    CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.8).epsilon(1e-15));
    const Vector inside = (Vector(3) << 0.1, -0.2, 0.3).finished();
    CHECK(project_ball(inside, 1.0) == inside);

    RandomStream rng(1, StreamId::estimator);
    for (int i = 0; i < 10000; ++i) {
        const Vector v = random_vector(rng, 1 + i % 9, -10.0, 10.0);
        const double D = 0.1 + 5.0 * rng.uniform();
        const Vector q = project_ball(v, D);
        REQUIRE(q.norm() <= D + 1e-12);
        if (v.norm() > D)
            REQUIRE((q / q.norm() - v / v.norm()).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK_THROWS_AS(project_ball(inside, 0.0), ContractError);
}

TEST_CASE("estimator formulas") {
    const FeatureMap phi = FeatureMap::tabular(4);
    const Vector g = theta_gradient(phi, 0.5, 0, 3, 1);
    CHECK(g == (Vector(4) << 0.5, -1.0, 0.0, 0.5).finished());
    CHECK(lambda_gradient_coefficient(4, 1.0, 0.5, 2.0, 1.0) == 4.0);
}

TEST_CASE("mirror_ascent_step") {
    const Vector half = Vector::Constant(2, std::log(0.5));
    CHECK((softmax(mirror_ascent_step(half, 0, 0.0, 1.0)) - Vector::Constant(2, 0.5)).cwiseAbs().maxCoeff() <= 1e-15);
    const Vector p = softmax(mirror_ascent_step(half, 0, std::log(4.0), 1.0));
    CHECK(std::abs(p[0] - 0.8) <= 1e-15);
    CHECK(std::abs(p[1] - 0.2) <= 1e-15);

    RandomStream rng(2, StreamId::estimator);
    for (int i = 0; i < 10000; ++i) {
        const Index m = 1 + rng.uniform_index(8);
        const Vector lambda = dirichlet_ones(rng, m);
        const Index k = rng.uniform_index(m);
        const double coef = 20.0 * rng.uniform() - 10.0, eta = rng.uniform();
        const Vector out_log = mirror_ascent_step(lambda.array().log().matrix(), k, coef, eta);
        Vector lin = lambda;
        lin[k] *= std::exp(eta * coef);
        lin /= lin.sum();
        const Vector out = out_log.array().exp().matrix();
        REQUIRE(std::abs(out.sum() - 1.0) <= 1e-12);
        REQUIRE((out - lin).cwiseAbs().maxCoeff() <= 1e-12);
    }
    // Huge steps stay finite and land on a vertex.
    const Vector v = softmax(mirror_ascent_step(Vector::Constant(3, -std::log(3.0)), 2, 1e6, 1.0));
    CHECK(v.allFinite());
    CHECK(v[2] == 1.0);
}

TEST_CASE("softmax policy") {
    SUBCASE("Theta = 0 gives the uniform policy") {
        const LinearMdpInstance inst = gen_linear_mdp(3, 5, 4, 3);
        const SoftmaxPolicy pi(inst.features, 4, 0.7);
        CHECK((pi.materialize().probs.array() - 0.25).abs().maxCoeff() <= 1e-15);
    }
    SUBCASE("per-state shifts of the features leave the policy unchanged") {
        RandomStream rng(3, StreamId::estimator);
        const Index X = 4, A = 3, d = 5;
        Matrix base(X * A, d);
        for (Eigen::Index r = 0; r < base.rows(); ++r)
            base.row(r) = random_vector(rng, d, -1, 1).transpose();
        Matrix shifted = base;
        for (Index x = 0; x < X; ++x) {
            const Vector s = random_vector(rng, d, -2, 2);
            for (Index a = 0; a < A; ++a)
                shifted.row(x * A + a) += s.transpose();
        }
        const FeatureMap f1 = FeatureMap::from_matrix(base), f2 = FeatureMap::from_matrix(shifted);
        const Vector theta = random_vector(rng, d, -3, 3);
        const SoftmaxPolicy p1(f1, A, 0.9, theta), p2(f2, A, 0.9, theta);
        CHECK((p1.materialize().probs - p2.materialize().probs).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("large beta on the optimal Q is greedy") {
        const LinearMdpInstance inst = toggle_instance(0.5);
        const OptimalSolution opt = optimal_values(inst.mdp);
        const SoftmaxPolicy pi(inst.features, 2, 1e4, opt.q_star);
        const Matrix diff = pi.materialize().probs - opt.pi_star.probs;
        for (Eigen::Index x = 0; x < diff.rows(); ++x)
            CHECK(0.5 * diff.row(x).cwiseAbs().sum() <= 1e-6);
    }
    SUBCASE("state_value and sampling") {
        const LinearMdpInstance inst = gen_linear_mdp(4, 3, 3, 4);
        RandomStream rng(4, StreamId::estimator);
        const Vector Theta = random_vector(rng, 4, -2, 2), theta = random_vector(rng, 4, -1, 1);
        const SoftmaxPolicy pi(inst.features, 3, 0.8, Theta);
        const Matrix table = softmax_table(inst.features, 3, 0.8, Theta);
        CHECK((pi.materialize().probs - table).cwiseAbs().maxCoeff() <= 1e-12);
        const Vector q = inst.features.phi * theta;
        std::vector<double> scratch(3);
        for (Index x = 0; x < 3; ++x) {
            const double v = table.row(x).dot(q.segment(x * 3, 3));
            CHECK(std::abs(pi.state_value(x, theta, scratch) - v) <= 1e-12);
        }
        std::vector<int> counts(3, 0);
        const int n = 60000;
        for (int i = 0; i < n; ++i)
            ++counts[pi.sample(1, rng, scratch)];
        for (Index a = 0; a < 3; ++a)
            CHECK(std::abs(counts[a] / double(n) - table(1, a)) <= 4.0 * std::sqrt(0.25 / n));
    }
}

TEST_CASE("gradient estimators") {
    const LinearMdpInstance inst = gen_linear_mdp(7, 5, 2, 3, {0.8});
    const double D = default_radius(3, 0.8);
    Planner planner(inst.mdp, inst.features, inst.core, small_config(20, 5, D, 1));
    // Move away from the uniform start so lambda and pi are generic.
    for (int i = 0; i < 4; ++i)
        planner.step();
    const Policy pi = planner.policy().materialize();
    const Vector lambda = planner.lambda();
    const double R = inst.features.radius;

    SUBCASE("theta estimator: norm bound, query accounting and unbiasedness") {
        const std::uint64_t q0 = planner.model().transition_queries();
        const int n = 400000;
        Vector mean = Vector::Zero(3);
        for (int i = 0; i < n; ++i) {
            const ThetaGradientSample s = planner.grad_theta_sample();
            REQUIRE(s.g.norm() <= 2 * R + 1e-12);
            mean += s.g;
        }
        mean /= n;
        CHECK(planner.model().transition_queries() - q0 == static_cast<std::uint64_t>(n));
        CHECK(planner.trace().theta_bound_violations == 0);
        const Vector exact = exact_grad_theta(inst.mdp, inst.features, inst.core, lambda, pi);
        CHECK((mean - exact).cwiseAbs().maxCoeff() <= 4.0 * 2 * R / std::sqrt(double(n)));
    }
    SUBCASE("lambda estimator: norm bound and unbiasedness") {
        RandomStream rng(9, StreamId::estimator);
        const Vector theta = project_ball(random_vector(rng, 3, -D, D), D);
        const Index m = inst.core.size();
        const int n = 400000;
        Vector mean = Vector::Zero(m);
        for (int i = 0; i < n; ++i) {
            const LambdaGradientSample s = planner.grad_lambda_sample(theta);
            REQUIRE(std::abs(s.coefficient) <= planner.lambda_grad_bound() * (1 + 1e-12));
            mean[s.core_slot] += s.coefficient;
        }
        mean /= n;
        CHECK(planner.trace().lambda_bound_violations == 0);
        const Vector exact = exact_grad_lambda(inst.mdp, inst.features, inst.core, theta, pi);
        CHECK((mean - exact).cwiseAbs().maxCoeff() <= 4.0 * planner.lambda_grad_bound() / std::sqrt(double(n)));
    }
}

TEST_CASE("sgd inner loop") {
    SUBCASE("K = 1 returns the previous iterate") {
        const LinearMdpInstance inst = gen_linear_mdp(8, 4, 2, 3);
        const RunResult r = run(inst.mdp, inst.features, inst.core, small_config(10, 1, 5.0, 2));
        for (const auto& round : r.trace.rounds)
            CHECK(round.theta.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("zero-gradient regime has no systematic drift") {
        const SymmetricInstance s;
        const PlannerConfig cfg = small_config(1, 10, 1.0, 0);
        CHECK(exact_grad_theta(s.mdp, s.phi, s.core, Vector::Constant(2, 0.5), Policy::uniform(2, 1))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-15);
        Vector mean = Vector::Zero(2);
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            PlannerConfig c = cfg;
            c.seed = seed;
            Planner p(s.mdp, s.phi, s.core, c);
            mean += p.sgd_inner_loop();
        }
        mean /= 100.0;
        CHECK(mean.cwiseAbs().maxCoeff() <= 4.0 * cfg.alpha * 2.0 * s.phi.radius);
    }
    SUBCASE("averaged SGD suboptimality respects its bound") {
        const LinearMdpInstance inst = gen_linear_mdp(9, 5, 2, 3, {0.8});
        const double D = default_radius(3, 0.8);
        const PlannerConfig base = tuned_config_for_horizon(20, {inst.core.size(), inst.features.radius, D, 2,
                                                                 std::log(3.0)});
        PlannerConfig cfg = base;
        cfg.K = 25;
        cfg.alpha = D / (inst.features.radius * 5.0);
        double mean = 0.0, bound = 0.0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            cfg.seed = seed;
            const RunResult r = run(inst.mdp, inst.features, inst.core, cfg);
            const auto rounds = reconstruct_rounds(inst.mdp, inst.features, inst.core, r.trace, cfg.beta);
            const SgdAudit a = sgd_audit(inst.mdp, inst.features, inst.core, rounds, cfg.alpha, cfg.K, D);
            mean += a.mean / 50.0;
            bound = a.bound;
        }
        CHECK(mean <= bound);
    }
}

TEST_CASE("run") {
    const LinearMdpInstance inst = gen_linear_mdp(10, 6, 3, 4, {0.9});
    const double D = default_radius(4, 0.9);
    const PlannerConfig cfg = small_config(37, 7, D, 5);
    const RunResult a = run(inst.mdp, inst.features, inst.core, cfg);
    const RunResult b = run(inst.mdp, inst.features, inst.core, cfg);

    SUBCASE("determinism and query accounting") {
        CHECK(a.J == b.J);
        CHECK(a.policy.theta_cum() == b.policy.theta_cum());
        CHECK(a.J >= 1);
        CHECK(a.J <= cfg.T);
        CHECK(a.transition_queries == cfg.T * (cfg.K + 1));
        CHECK(a.init_queries == cfg.T * cfg.K);
        CHECK(a.trace.rounds.size() == cfg.T);
        CHECK(a.trace.rounds.back().transition_queries == a.transition_queries);
        CHECK(a.trace.theta_grad_samples == cfg.T * cfg.K);
        CHECK(a.trace.lambda_grad_samples == cfg.T);
    }
    SUBCASE("iterates stay in their domains") {
        for (const auto& r : a.trace.rounds) {
            CHECK(r.lambda.minCoeff() >= 0.0);
            CHECK(std::abs(r.lambda.sum() - 1.0) <= 1e-9);
            CHECK(r.theta.norm() <= D + 1e-12);
        }
        CHECK(a.trace.theta_bound_violations == 0);
        CHECK(a.trace.lambda_bound_violations == 0);
    }
    SUBCASE("Theta_J is the prefix sum before J") {
        Vector sum = Vector::Zero(4);
        for (std::uint64_t t = 1; t < a.J; ++t)
            sum += a.trace.rounds[t - 1].theta;
        CHECK((a.trace.theta_J - sum).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(a.policy.theta_cum() == a.trace.theta_J);
    }
    SUBCASE("J is uniform over 1..T") {
        std::vector<int> counts(4, 0);
        PlannerConfig c = small_config(4, 1, D, 0);
        for (std::uint64_t seed = 0; seed < 4000; ++seed) {
            c.seed = seed;
            Planner p(inst.mdp, inst.features, inst.core, c);
            for (int t = 0; t < 4; ++t)
                p.step();
            ++counts[p.finish().J - 1];
        }
        for (int k : counts)
            CHECK(std::abs(k - 1000) <= 4 * std::sqrt(4000 * 0.25 * 0.75));
    }
    SUBCASE("live policies are reproducible from the trace") {
        Planner p(inst.mdp, inst.features, inst.core, cfg);
        Vector Theta = Vector::Zero(4);
        for (std::uint64_t t = 0; t < cfg.T; ++t) {
            const Matrix live = p.policy().materialize().probs;
            CHECK((live - softmax_table(inst.features, 3, cfg.beta, Theta)).cwiseAbs().maxCoeff() <= 1e-12);
            p.step();
            Theta += p.trace().rounds.back().theta;
        }
        const auto rounds = reconstruct_rounds(inst.mdp, inst.features, inst.core, a.trace, cfg.beta);
        for (std::size_t t = 0; t < rounds.size(); ++t)
            CHECK((rounds[t].lambda - a.trace.rounds[t].lambda).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("lifecycle errors") {
        Planner p(inst.mdp, inst.features, inst.core, small_config(1, 1, D, 0));
        CHECK_THROWS_AS(p.finish(), ContractError);
        p.step();
        CHECK_THROWS_AS(p.step(), ContractError);
        CHECK_NOTHROW(p.finish());
    }
    SUBCASE("disabling the trace keeps the result") {
        PlannerConfig c = cfg;
        c.record_trace = false;
        const RunResult r = run(inst.mdp, inst.features, inst.core, c);
        CHECK(r.trace.rounds.empty());
        CHECK(r.J == a.J);
        CHECK(r.policy.theta_cum() == a.policy.theta_cum());
    }
}

TEST_CASE("config validation") {
    const LinearMdpInstance inst = toggle_instance(0.5);
    PlannerConfig ok = small_config(5, 2, 2.0, 0);
    CHECK_NOTHROW(ok.validate());
    for (int which = 0; which < 6; ++which) {
        PlannerConfig c = ok;
        switch (which) {
            case 0: c.T = 0; break;
            case 1: c.K = 0; break;
            case 2: c.eta = 0; break;
            case 3: c.beta = -1; break;
            case 4: c.alpha = NAN; break;
            case 5: c.D_gamma = INFINITY; break;
        }
        CHECK_THROWS_AS(c.validate(), ContractError);
        CHECK_THROWS_AS(run(inst.mdp, inst.features, inst.core, c), ContractError);
    }
    const FeatureMap wrong = FeatureMap::tabular(6);
    CHECK_THROWS_AS(Planner(inst.mdp, wrong, inst.core, ok), ContractError);
}

TEST_CASE("hyperparameter schedule") {
    CHECK(inner_loop_length(10000, 2, 2) == 1804);
    CHECK(inner_loop_length(1, 5, 3) == 1);
    CHECK_THROWS_AS(inner_loop_length(10, 1, 1), ContractError);

    const BoundInputs in{4, 1.0, 4.0, 2, std::log(4.0)};
    SUBCASE("tuned rates equalize the paired terms") {
        const PlannerConfig c = tuned_config_for_horizon(5000, in);
        const double T = 5000, g = 4.0 * (1 + 2 * 4.0);
        CHECK(in.dkl_bound / (c.eta * T) == doctest::Approx(c.eta * g * g / 2).epsilon(1e-12));
        CHECK(std::log(2.0) / (c.beta * T) == doctest::Approx(c.beta * 16.0 / 2).epsilon(1e-12));
        CHECK(2 * 16.0 / (c.alpha * c.K) == doctest::Approx(2 * c.alpha).epsilon(1e-12));
    }
    SUBCASE("tune_hyperparameters is self-consistent and minimal") {
        for (double eps : {2.0, 1.0, 0.5}) {
            const PlannerConfig c = tune_hyperparameters(eps, in.m, in.R, in.D_gamma, in.num_actions, in.dkl_bound);
            CHECK(optimization_error_bound(c, in) <= eps);
            CHECK(c.K == inner_loop_length(c.T, in.m, in.num_actions));
            if (c.T > 1)
                CHECK(optimization_error_bound(tuned_config_for_horizon(c.T - 1, in), in) > eps);
        }
    }
    SUBCASE("queries scale like epsilon^-4") {
        for (double eps : {0.4, 0.1}) {
            const auto q = [&](double e) {
                const PlannerConfig c = tune_hyperparameters(e, in.m, in.R, in.D_gamma, in.num_actions, in.dkl_bound);
                return static_cast<double>(c.T) * static_cast<double>(c.K + 1);
            };
            const double ratio = q(eps / 2) / q(eps);
            CHECK(ratio >= 14.0);
            CHECK(ratio <= 18.0);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(tune_hyperparameters(1e-9, 4, 1.0, 4.0, 2, std::log(4.0)), ContractError);
        CHECK_THROWS_AS(tune_hyperparameters(0.0, 4, 1.0, 4.0, 2, std::log(4.0)), ContractError);
        CHECK_THROWS_AS(tuned_config_for_horizon(10, {4, 0.0, 4.0, 2, 1.0}), ContractError);
    }
}

TEST_CASE("tuned runs improve with the horizon on the toggle MDP") {
    const LinearMdpInstance inst = toggle_instance(0.5);
    const double D = default_radius(4, 0.5);
    const BoundInputs in{inst.core.size(), inst.features.radius, D, 2, std::log(4.0)};
    const OptimalSolution opt = optimal_values(inst.mdp);
    std::vector<double> short_run, long_run;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (std::uint64_t T : {100u, 3000u}) {
            PlannerConfig c = tuned_config_for_horizon(T, in);
            c.seed = seed;
            const RunResult r = run(inst.mdp, inst.features, inst.core, c);
            const auto rounds = reconstruct_rounds(inst.mdp, inst.features, inst.core, r.trace, c.beta);
            double mean = 0.0;
            for (const auto& rs : rounds)
                mean += suboptimality(inst.mdp, opt, rs.policy) / rounds.size();
            (T == 100 ? short_run : long_run).push_back(mean);
        }
    }
    CHECK(median(long_run) < median(short_run));
}
