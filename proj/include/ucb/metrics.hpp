#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ucb/errors.hpp"

namespace ucb {

/// R(i, j): test accuracy (percent) on task i after learning task j, 1-based, j >= i.
class RMatrix {
public:
    RMatrix() = default;
    explicit RMatrix(int n) : n_(n), cells_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
        if (n < 1) throw InvalidArgument("RMatrix needs at least one task");
    }

    int size() const { return n_; }

    void set(int i, int j, double accuracy) {
        check(i, j);
        if (!(accuracy >= 0.0 && accuracy <= 100.0))
            throw InvalidArgument("accuracy " + std::to_string(accuracy) + " outside [0, 100]");
        cells_[index(i, j)] = accuracy;
    }

    std::optional<double> get(int i, int j) const {
        check(i, j);
        return cells_[index(i, j)];
    }

    double at(int i, int j) const {
        const auto v = get(i, j);
        if (!v) throw InvalidState("R(" + std::to_string(i) + ", " + std::to_string(j) + ") is not populated");
        return *v;
    }

    friend bool operator==(const RMatrix&, const RMatrix&) = default;

private:
    void check(int i, int j) const {
        if (i < 1 || j < 1 || i > n_ || j > n_) throw InvalidArgument("RMatrix index out of range");
        if (j < i) throw InvalidArgument("RMatrix entries with j < i are unused");
    }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>((i - 1) * n_ + (j - 1)); }

    int n_ = 0;
    std::vector<std::optional<double>> cells_;
};

struct SequenceMetrics {
    double bwt = 0.0;  // percent
    double acc = 0.0;  // percent
};

/// BWT = mean_i (R(i, n) - R(i, i)), ACC = mean_i R(i, n).
inline SequenceMetrics bwt_acc(const RMatrix& r) {
    const int n = r.size();
    if (n < 1) throw InvalidState("empty RMatrix");
    SequenceMetrics m;
    for (int i = 1; i <= n; ++i) {
        const auto final_acc = r.get(i, n);
        const auto own = r.get(i, i);
        if (!final_acc || !own) throw InvalidState("RMatrix final column or diagonal is not populated");
        m.bwt += *final_acc - *own;
        m.acc += *final_acc;
    }
    m.bwt /= n;
    m.acc /= n;
    return m;
}

}  // namespace ucb
