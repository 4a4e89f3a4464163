#include <catch2/catch_amalgamated.hpp>

#include "flexfleet/qp.hpp"

using namespace flexfleet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

qp::Problem blank(int n) {
    qp::Problem p;
    p.q = VectorXd::Zero(n);
    p.c = VectorXd::Zero(n);
    p.A = MatrixXd::Zero(0, n);
    p.b = VectorXd::Zero(0);
    p.G = MatrixXd::Zero(0, n);
    p.h = VectorXd::Zero(0);
    p.lb = VectorXd::Constant(n, -kInf);
    p.ub = VectorXd::Constant(n, kInf);
    return p;
}
}  // namespace

TEST_CASE("equality-constrained quadratic has the analytic center") {
    qp::Problem p = blank(2);
    p.q << 2.0, 2.0;
    p.A = MatrixXd::Zero(1, 2);
    p.A << 1.0, 1.0;
    p.b = VectorXd::Constant(1, 2.0);
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x[0] == Catch::Approx(1.0).margin(1e-8));
    CHECK(r.x[1] == Catch::Approx(1.0).margin(1e-8));
    CHECK(r.objective == Catch::Approx(2.0).margin(1e-8));
    CHECK(r.kkt_residual < 1e-8);
}

TEST_CASE("active upper bound and its multiplier") {
    // min (x-3)^2 = x^2 - 6x + 9 on [0, 2]: optimum at x = 2, zu = 2.
    qp::Problem p = blank(1);
    p.q << 2.0;
    p.c << -6.0;
    p.objective_offset = 9.0;
    p.lb << 0.0;
    p.ub << 2.0;
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x[0] == Catch::Approx(2.0).margin(1e-8));
    CHECK(r.objective == Catch::Approx(1.0).margin(1e-7));
    CHECK(r.zu[0] == Catch::Approx(2.0).margin(1e-6));
    CHECK(r.kkt_residual < 1e-8);
}

TEST_CASE("general inequality rows") {
    // min x^2 + y^2 with x + y >= 4: x = y = 2.
    qp::Problem p = blank(2);
    p.q << 2.0, 2.0;
    p.G = MatrixXd::Zero(1, 2);
    p.G << -1.0, -1.0;
    p.h = VectorXd::Constant(1, -4.0);
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x[0] == Catch::Approx(2.0).margin(1e-7));
    CHECK(r.x[1] == Catch::Approx(2.0).margin(1e-7));
    CHECK(r.z[0] == Catch::Approx(4.0).margin(1e-6));
    CHECK(r.kkt_residual < 1e-8);
}

TEST_CASE("linear program over a simplex") {
    // min x + 2y, x + y >= 1, x,y >= 0: x = 1, y = 0, objective 1.
    qp::Problem p = blank(2);
    p.c << 1.0, 2.0;
    p.G = MatrixXd::Zero(1, 2);
    p.G << -1.0, -1.0;
    p.h = VectorXd::Constant(1, -1.0);
    p.lb << 0.0, 0.0;
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.objective == Catch::Approx(1.0).margin(1e-7));
    CHECK(r.x[0] == Catch::Approx(1.0).margin(1e-6));
    CHECK(r.kkt_residual < 1e-8);
}

TEST_CASE("water filling toy") {
    // min sum (base_t + d_t)^2, sum d = 2, d >= 0, base = [3,1,2]:
    // fill to level 2.5 -> d = [0, 1.5, 0.5], objective 9 + 6.25 + 6.25.
    qp::Problem p = blank(3);
    p.q = VectorXd::Constant(3, 2.0);
    p.c.resize(3);
    p.c << 6.0, 2.0, 4.0;
    p.objective_offset = 9.0 + 1.0 + 4.0;
    p.A = MatrixXd::Ones(1, 3);
    p.b = VectorXd::Constant(1, 2.0);
    p.lb = VectorXd::Zero(3);
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x[0] == Catch::Approx(0.0).margin(1e-7));
    CHECK(r.x[1] == Catch::Approx(1.5).margin(1e-7));
    CHECK(r.x[2] == Catch::Approx(0.5).margin(1e-7));
    CHECK(r.objective == Catch::Approx(21.5).margin(1e-7));
}

TEST_CASE("presolve: fixed variables and singleton rows") {
    qp::Problem p = blank(2);
    p.q << 2.0, 2.0;
    p.c << -2.0, -8.0;
    p.lb << 1.0, -kInf;
    p.ub << 1.0, kInf;   // x fixed at 1
    p.G = MatrixXd::Zero(1, 2);
    p.G << 0.0, 2.0;     // 2y <= 4 -> y <= 2
    p.h = VectorXd::Constant(1, 4.0);
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    CHECK(r.x[0] == Catch::Approx(1.0));
    CHECK(r.x[1] == Catch::Approx(2.0).margin(1e-7));
    // Folded row keeps its dual: stationarity 2y - 8 + 2 z = 0 at y=2 -> z=2.
    CHECK(r.z[0] == Catch::Approx(2.0).margin(1e-6));
    CHECK(r.kkt_residual < 1e-8);
}

TEST_CASE("conflicting bounds are infeasible") {
    qp::Problem p = blank(1);
    p.lb << 2.0;
    p.ub << 1.0;
    CHECK(qp::solve(p).status == qp::Status::infeasible);

    qp::Problem p2 = blank(1);
    p2.q << 2.0;
    p2.G = MatrixXd::Zero(2, 1);
    p2.G << 1.0, -1.0;   // x <= 1, -x <= -2  (x >= 2)
    p2.h = VectorXd::Zero(2);
    p2.h << 1.0, -2.0;
    CHECK(qp::solve(p2).status == qp::Status::infeasible);
}

TEST_CASE("infeasible equality against bounds is detected") {
    // x + y = 4 with x,y in [0,1].
    qp::Problem p = blank(2);
    p.q << 2.0, 2.0;
    p.A = MatrixXd::Ones(1, 2);
    p.b = VectorXd::Constant(1, 4.0);
    p.lb << 0.0, 0.0;
    p.ub << 1.0, 1.0;
    auto r = qp::solve(p);
    CHECK(r.status != qp::Status::optimal);
}

TEST_CASE("kkt residual grows for perturbed points") {
    qp::Problem p = blank(2);
    p.q << 2.0, 2.0;
    p.A = MatrixXd::Ones(1, 2);
    p.b = VectorXd::Constant(1, 2.0);
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::optimal);
    const double at_opt = qp::kkt_residual(p, r.x, r.y, r.z, r.zl, r.zu);
    CHECK(at_opt < 1e-8);
    VectorXd bad = r.x;
    bad[0] += 0.1;
    bad[1] -= 0.1;  // keeps A x = b, breaks stationarity
    CHECK(qp::kkt_residual(p, bad, r.y, r.z, r.zl, r.zu) > 1e-3);
}
