#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace caqa {

/// 1-based ranks with ties assigned the average rank of their run.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation: Pearson correlation of the two rank vectors.
/// Undefined (throws) for fewer than two points or when either series has no
/// rank variance.
inline double srcc(const std::vector<double>& predicted, const std::vector<double>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("srcc: series lengths differ");
    const std::size_t n = predicted.size();
    if (n < 2) throw std::invalid_argument("srcc: need at least two points");
    std::vector<double> rx = average_ranks(predicted);
    std::vector<double> ry = average_ranks(truth);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = rx[i] - mx, dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if (vx == 0.0 || vy == 0.0)
        throw std::invalid_argument("srcc: zero rank variance, correlation undefined");
    return cov / std::sqrt(vx * vy);
}

/// Fraction of unordered pairs ranked the same way in both series. Any pair
/// tied in either series counts 0.5.
inline double pairwise_accuracy(const std::vector<double>& predicted,
                                const std::vector<double>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("pairwise_accuracy: series lengths differ");
    const std::size_t n = predicted.size();
    if (n < 2) throw std::invalid_argument("pairwise_accuracy: need at least two points");
    double credit = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j, ++pairs) {
            const double pd = predicted[i] - predicted[j];
            const double td = truth[i] - truth[j];
            if (pd == 0.0 || td == 0.0)
                credit += 0.5;
            else if ((pd > 0.0) == (td > 0.0))
                credit += 1.0;
        }
    return credit / static_cast<double>(pairs);
}

enum class MetricKind : std::uint8_t { Srcc, PairwiseAccuracy };

inline const char* metric_name(MetricKind k) {
    return k == MetricKind::Srcc ? "srcc" : "pairwise_accuracy";
}

inline MetricKind metric_from_name(const std::string& s) {
    if (s == "srcc") return MetricKind::Srcc;
    if (s == "pairwise_accuracy") return MetricKind::PairwiseAccuracy;
    throw std::invalid_argument("unknown metric '" + s + "'");
}

/// Stage-by-task evaluation matrix: cell (i, j) is the performance on task j
/// after training stage i, defined for j <= i. Indices are 0-based here;
/// files and reports use 1-based labels.
class PerformanceMatrix {
public:
    PerformanceMatrix() = default;
    PerformanceMatrix(std::size_t stages, MetricKind kind)
        : stages_(stages), kind_(kind), cells_(stages * stages) {}

    std::size_t stages() const { return stages_; }
    MetricKind kind() const { return kind_; }

    void set(std::size_t stage, std::size_t task, double value) {
        if (task > stage)
            throw std::out_of_range("PerformanceMatrix: cell (" + std::to_string(stage) + ", " +
                                    std::to_string(task) + ") is above the diagonal");
        cells_.at(stage * stages_ + task) = value;
    }

    bool defined(std::size_t stage, std::size_t task) const {
        return cells_.at(stage * stages_ + task).has_value();
    }

    double at(std::size_t stage, std::size_t task) const {
        const auto& c = cells_.at(stage * stages_ + task);
        if (!c)
            throw std::out_of_range("PerformanceMatrix: cell (" + std::to_string(stage) + ", " +
                                    std::to_string(task) + ") is undefined");
        return *c;
    }

    /// Mean of the final row.
    double average_performance() const {
        require_stages(1);
        double sum = 0.0;
        for (std::size_t j = 0; j < stages_; ++j) sum += at(stages_ - 1, j);
        return sum / static_cast<double>(stages_);
    }

    /// Average clamped drop from each task's immediate result to its final
    /// result, over all but the last task.
    double negative_backward_transfer() const {
        require_stages(2);
        double sum = 0.0;
        for (std::size_t t = 0; t + 1 < stages_; ++t)
            sum += std::max(0.0, at(t, t) - at(stages_ - 1, t));
        return sum / static_cast<double>(stages_ - 1);
    }

    /// Average worst-case gap within each task's column, max over defined rows
    /// minus min over defined rows other than the task's own stage. Unclamped.
    double maximum_forgetting() const {
        require_stages(2);
        double sum = 0.0;
        for (std::size_t t = 0; t + 1 < stages_; ++t) {
            double hi = at(t, t);
            double lo = std::numeric_limits<double>::infinity();
            for (std::size_t i = t; i < stages_; ++i) {
                if (!defined(i, t)) continue;
                hi = std::max(hi, at(i, t));
                if (i != t) lo = std::min(lo, at(i, t));
            }
            sum += hi - lo;
        }
        return sum / static_cast<double>(stages_ - 1);
    }

    bool operator==(const PerformanceMatrix& o) const {
        return stages_ == o.stages_ && kind_ == o.kind_ && cells_ == o.cells_;
    }

    /// CSV with one row per stage; undefined cells hold the literal token NA.
    std::string to_csv(const std::string& config_hash) const {
        std::ostringstream os;
        os.precision(17);
        os << "# config_hash=" << config_hash << "\n";
        os << "# metric=" << metric_name(kind_) << "\n";
        os << "stage";
        for (std::size_t j = 0; j < stages_; ++j) os << ",task_" << (j + 1);
        os << "\n";
        for (std::size_t i = 0; i < stages_; ++i) {
            os << (i + 1);
            for (std::size_t j = 0; j < stages_; ++j) {
                os << ",";
                if (defined(i, j))
                    os << at(i, j);
                else
                    os << "NA";
            }
            os << "\n";
        }
        return os.str();
    }

    static PerformanceMatrix from_csv(std::istream& in) {
        std::string line;
        MetricKind kind = MetricKind::Srcc;
        std::vector<std::vector<std::optional<double>>> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (line.rfind("# metric=", 0) == 0) {
                kind = metric_from_name(line.substr(9));
                continue;
            }
            if (line[0] == '#' || line.rfind("stage", 0) == 0) continue;
            std::vector<std::optional<double>> row;
            std::stringstream ls(line);
            std::string cell;
            bool first = true;
            while (std::getline(ls, cell, ',')) {
                if (first) {
                    first = false;
                    continue;
                }
                if (cell == "NA")
                    row.emplace_back(std::nullopt);
                else
                    row.emplace_back(std::stod(cell));
            }
            rows.push_back(std::move(row));
        }
        PerformanceMatrix m(rows.size(), kind);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size())
                throw std::invalid_argument("PerformanceMatrix::from_csv: ragged row " +
                                            std::to_string(i + 1));
            for (std::size_t j = 0; j <= i; ++j)
                if (rows[i][j]) m.set(i, j, *rows[i][j]);
        }
        return m;
    }

private:
    void require_stages(std::size_t need) const {
        if (stages_ < need)
            throw std::invalid_argument("PerformanceMatrix: metric needs at least " +
                                        std::to_string(need) + " stages, have " +
                                        std::to_string(stages_));
        if (need >= 1)
            for (std::size_t j = 0; j < stages_; ++j)
                if (!defined(stages_ - 1, j))
                    throw std::invalid_argument("PerformanceMatrix: final row incomplete at task " +
                                                std::to_string(j + 1));
    }

    std::size_t stages_ = 0;
    MetricKind kind_ = MetricKind::Srcc;
    std::vector<std::optional<double>> cells_;
};

}  // namespace caqa
