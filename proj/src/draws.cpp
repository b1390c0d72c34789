#include "mupsim/draws.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "mupsim/rng.hpp"

namespace mupsim {

DrawRule DrawRule::gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
    // Jacobi matrix of the probabilists' Hermite recurrence: diagonal 0,
    // off-diagonal sqrt(k). Eigenvalues are the nodes, squared first
    // eigenvector components the weights (for the N(0,1) measure).
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double b = std::sqrt(static_cast<double>(k));
        jacobi(k, k - 1) = b;
        jacobi(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    DrawRule rule;
    rule.method = DrawMethod::SparseGrid;
    rule.level = n;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = es.eigenvalues()(i);
        const double v = es.eigenvectors()(0, i);
        rule.weights[i] = v * v;
        wsum += rule.weights[i];
    }
    for (double& w : rule.weights) w /= wsum;
    // enforce exact symmetry of the node set (pairs average to zero)
    for (int i = 0, j = n - 1; i < j; ++i, --j) {
        const double mag = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        rule.nodes[i] = -mag;
        rule.nodes[j] = mag;
        const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.weights[i] = rule.weights[j] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

DrawRule DrawRule::halton(int n) {
    if (n < 1) throw std::invalid_argument("halton: need at least one draw");
    DrawRule rule;
    rule.method = DrawMethod::Halton;
    rule.level = n;
    rule.nodes.resize(n);
    rule.weights.assign(n, 1.0 / n);
    const std::uint64_t skip = 10;
    for (int i = 0; i < n; ++i)
        rule.nodes[i] = inverse_normal_cdf(halton_value(skip + 1 + i, 2));
    return rule;
}

DrawRule DrawRule::make(const std::string& method, int level) {
    if (method == "sparse-grid") return gauss_hermite(level);
    if (method == "halton") return halton(level);
    throw std::invalid_argument("unknown draw method: " + method);
}

std::string draw_method_name(DrawMethod m) {
    return m == DrawMethod::SparseGrid ? "sparse-grid" : "halton";
}

}  // namespace mupsim
