#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mupsim {

enum class DrawMethod { SparseGrid, Halton };

// Integration rule for the scalar standard-normal taste shock.
// Sparse-grid rules carry quadrature weights summing to 1; Halton rules carry
// uniform weights 1/R. Both are fully reproducible from (method, level).
struct DrawRule {
    DrawMethod method = DrawMethod::SparseGrid;
    int level = 9;  // node count
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const { return nodes.size(); }

    // Gauss-Hermite rule for N(0,1), computed by Golub-Welsch.
    static DrawRule gauss_hermite(int n);
    // Halton (base 2) pushed through the inverse normal CDF; first 10 points skipped.
    static DrawRule halton(int n);

    static DrawRule make(DrawMethod method, int level) {
        return method == DrawMethod::SparseGrid ? gauss_hermite(level) : halton(level);
    }
    static DrawRule make(const std::string& method, int level);
};

std::string draw_method_name(DrawMethod m);

}  // namespace mupsim
