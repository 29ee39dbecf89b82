#pragma once

// Datasets, IDX ingestion and construction of continual-learning task sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ucb/binary_io.hpp"
#include "ucb/errors.hpp"
#include "ucb/network.hpp"
#include "ucb/variational.hpp"

namespace ucb {

struct Dataset {
    Matrix images;            // one example per row, values in [0, 1] for image data
    std::vector<int> labels;  // in [0, class_count)
    int class_count = 0;

    std::size_t size() const { return labels.size(); }

    void validate() const {
        if (static_cast<std::size_t>(images.rows()) != labels.size())
            throw ConsistencyError("dataset has " + std::to_string(images.rows()) + " rows but " +
                                   std::to_string(labels.size()) + " labels");
        for (int y : labels)
            if (y < 0 || y >= class_count) throw InvalidArgument("dataset label outside [0, class_count)");
    }

    Dataset subset(const std::vector<std::size_t>& rows) const {
        Dataset out;
        out.class_count = class_count;
        out.images.resize(static_cast<Index>(rows.size()), images.cols());
        out.labels.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.images.row(static_cast<Index>(i)) = images.row(static_cast<Index>(rows[i]));
            out.labels.push_back(labels[rows[i]]);
        }
        return out;
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.class_count == b.class_count && a.labels == b.labels && a.images.rows() == b.images.rows() &&
               a.images.cols() == b.images.cols() && a.images == b.images;
    }
};

// IDX ------------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(const Bytes& b, std::size_t at, const std::string& what) {
    if (b.size() < at + 4) throw CorruptionError(what + ": truncated header");
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

}  // namespace detail

/// Parses an IDX image/label file pair; pixel bytes are divided by 255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const Bytes img = read_file(images_path);
    const Bytes lab = read_file(labels_path);
    const std::string iw = images_path.string(), lw = labels_path.string();
    if (detail::read_be32(img, 0, iw) != kIdxImagesMagic) throw FormatError(iw + ": not an IDX image file");
    if (detail::read_be32(lab, 0, lw) != kIdxLabelsMagic) throw FormatError(lw + ": not an IDX label file");
    const std::uint32_t n = detail::read_be32(img, 4, iw);
    const std::uint32_t rows = detail::read_be32(img, 8, iw);
    const std::uint32_t cols = detail::read_be32(img, 12, iw);
    const std::uint32_t n_labels = detail::read_be32(lab, 4, lw);
    const std::size_t pixels = std::size_t{rows} * cols;
    if (img.size() < 16 + std::size_t{n} * pixels) throw CorruptionError(iw + ": truncated payload");
    if (lab.size() < 8 + std::size_t{n_labels}) throw CorruptionError(lw + ": truncated payload");
    if (n != n_labels)
        throw ConsistencyError("image file has " + std::to_string(n) + " examples, label file has " +
                               std::to_string(n_labels));

    Dataset ds;
    ds.images.resize(n, static_cast<Index>(pixels));
    const std::uint8_t* px = img.data() + 16;
    double* out = ds.images.data();
    for (std::size_t i = 0, total = std::size_t{n} * pixels; i < total; ++i) out[i] = px[i] / 255.0;
    ds.labels.resize(n);
    int max_label = -1;
    for (std::uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = max_label + 1;
    return ds;
}

// Task sequences -------------------------------------------------------------------

enum class SequenceKind { split_classes, pixel_permutation, synthetic };

/// A bijection over pixel indices: output column j takes input column permutation[j].
struct PermutationSpec {
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> permutation;

    bool is_bijection() const {
        std::vector<std::uint32_t> sorted = permutation;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i)
            if (sorted[i] != i) return false;
        return true;
    }

    PermutationSpec inverse() const {
        PermutationSpec inv{seed, std::vector<std::uint32_t>(permutation.size())};
        for (std::size_t j = 0; j < permutation.size(); ++j) inv.permutation[permutation[j]] = static_cast<std::uint32_t>(j);
        return inv;
    }

    Matrix apply(const Matrix& images) const {
        if (static_cast<std::size_t>(images.cols()) != permutation.size())
            throw DimensionError("permutation length does not match image width");
        Matrix out(images.rows(), images.cols());
        for (Index r = 0; r < images.rows(); ++r)
            for (std::size_t j = 0; j < permutation.size(); ++j)
                out(r, static_cast<Index>(j)) = images(r, static_cast<Index>(permutation[j]));
        return out;
    }
};

struct TaskData {
    int task_id = 1;
    Dataset train;
    Dataset validation;
    Dataset test;
    ClassRange classes;  // position of the task's classes in a shared output layer
};

struct TaskSequence {
    std::vector<TaskData> tasks;
    SequenceKind kind = SequenceKind::synthetic;
    std::vector<PermutationSpec> permutations;  // pixel_permutation only, one per task

    std::size_t size() const { return tasks.size(); }
    const TaskData& task(int task_id) const { return tasks.at(static_cast<std::size_t>(task_id - 1)); }
    int input_dim() const { return tasks.empty() ? 0 : static_cast<int>(tasks.front().train.images.cols()); }

    std::vector<int> class_counts() const {
        std::vector<int> out;
        for (const auto& t : tasks) out.push_back(t.classes.count);
        return out;
    }

    /// True when every task uses the same output columns (permutation sequences).
    bool shared_label_space() const { return kind == SequenceKind::pixel_permutation; }

    /// First `n` tasks only.
    TaskSequence prefix(std::size_t n) const {
        TaskSequence out = *this;
        out.tasks.resize(std::min(n, tasks.size()));
        if (!out.permutations.empty()) out.permutations.resize(out.tasks.size());
        return out;
    }
};

struct SplitOptions {
    double validation_fraction = 0.15;
    std::uint64_t seed = 0;
};

namespace detail {

/// Stratified split: for every class, round(fraction * count) shuffled examples go to validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const Dataset& ds,
                                                                                      const SplitOptions& opt) {
    if (!(opt.validation_fraction >= 0.0 && opt.validation_fraction < 1.0))
        throw InvalidArgument("validation fraction must lie in [0, 1)");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.class_count));
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    Rng rng(opt.seed);
    std::vector<std::size_t> train, val;
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_val = static_cast<std::size_t>(std::llround(opt.validation_fraction * static_cast<double>(idx.size())));
        val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

/// Rows whose label is in `group`, labels replaced by their position in `group`.
inline Dataset select_classes(const Dataset& ds, const std::vector<std::size_t>& candidates, const std::vector<int>& group) {
    std::vector<std::size_t> rows;
    for (std::size_t i : candidates)
        if (std::find(group.begin(), group.end(), ds.labels[i]) != group.end()) rows.push_back(i);
    Dataset out = ds.subset(rows);
    for (auto& y : out.labels) y = static_cast<int>(std::find(group.begin(), group.end(), y) - group.begin());
    out.class_count = static_cast<int>(group.size());
    return out;
}

inline std::vector<std::size_t> all_rows(const Dataset& ds) {
    std::vector<std::size_t> r(ds.size());
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

}  // namespace detail

/// One task per class group, labels remapped to [0, group size). Validation rows are
/// carved from the training set per class before remapping.
inline TaskSequence split_by_classes(const Dataset& train, const Dataset& test, const std::vector<std::vector<int>>& groups,
                                     const SplitOptions& opt = {}) {
    train.validate();
    test.validate();
    if (groups.empty()) throw InvalidArgument("split_by_classes needs at least one group");
    std::set<int> seen;
    for (const auto& g : groups) {
        if (g.empty()) throw InvalidArgument("empty class group");
        for (int c : g) {
            if (c < 0 || c >= train.class_count) throw InvalidArgument("class " + std::to_string(c) + " does not exist");
            if (!seen.insert(c).second) throw InvalidArgument("class " + std::to_string(c) + " appears in two groups");
        }
    }
    const auto [train_rows, val_rows] = detail::stratified_split(train, opt);
    const auto test_rows = detail::all_rows(test);
    TaskSequence seq;
    seq.kind = SequenceKind::split_classes;
    int offset = 0;
    for (std::size_t t = 0; t < groups.size(); ++t) {
        TaskData task;
        task.task_id = static_cast<int>(t + 1);
        task.train = detail::select_classes(train, train_rows, groups[t]);
        task.validation = detail::select_classes(train, val_rows, groups[t]);
        task.test = detail::select_classes(test, test_rows, groups[t]);
        task.classes = {offset, static_cast<int>(groups[t].size())};
        offset += task.classes.count;
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

/// Permutation of task k: identity for k = 1, otherwise a shuffle seeded by (master_seed, k).
inline PermutationSpec task_permutation(std::size_t pixels, std::uint64_t master_seed, int k) {
    PermutationSpec p;
    p.seed = master_seed;
    p.permutation.resize(pixels);
    std::iota(p.permutation.begin(), p.permutation.end(), 0u);
    if (k > 1) {
        std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                          static_cast<std::uint32_t>(k)};
        Rng rng(seq);
        std::shuffle(p.permutation.begin(), p.permutation.end(), rng);
    }
    return p;
}

/// `n_tasks` copies of the dataset with pixel permutation P_k applied; labels unchanged.
inline TaskSequence make_permuted_tasks(const Dataset& train, const Dataset& test, int n_tasks, std::uint64_t master_seed,
                                        const SplitOptions& opt = {}) {
    if (n_tasks < 1) throw InvalidArgument("make_permuted_tasks needs n_tasks >= 1");
    train.validate();
    test.validate();
    const auto [train_rows, val_rows] = detail::stratified_split(train, opt);
    const Dataset base_train = train.subset(train_rows);
    const Dataset base_val = train.subset(val_rows);
    TaskSequence seq;
    seq.kind = SequenceKind::pixel_permutation;
    for (int k = 1; k <= n_tasks; ++k) {
        auto perm = task_permutation(static_cast<std::size_t>(train.images.cols()), master_seed, k);
        TaskData task;
        task.task_id = k;
        task.train = base_train;
        task.validation = base_val;
        task.test = test;
        if (k > 1) {
            task.train.images = perm.apply(base_train.images);
            task.validation.images = perm.apply(base_val.images);
            task.test.images = perm.apply(test.images);
        }
        task.classes = {0, train.class_count};
        seq.permutations.push_back(std::move(perm));
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

struct BlobOptions {
    double radius = 3.0;  // distance of each class centre from the task origin
    double noise = 1.0;   // isotropic standard deviation
};

/// Gaussian blobs: per task, class centres sit evenly on a circle in a random
/// task-specific 2-D plane through the origin; train, validation and test sets
/// each hold `examples_per_class` points per class.
inline TaskSequence make_synthetic_blobs(int n_tasks, int classes_per_task, int dims, int examples_per_class,
                                         std::uint64_t seed, const BlobOptions& opt = {}) {
    if (n_tasks < 1 || classes_per_task < 1 || dims < 1 || examples_per_class < 1)
        throw InvalidArgument("make_synthetic_blobs: all counts must be >= 1");
    Rng rng(seed);
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    TaskSequence seq;
    seq.kind = SequenceKind::synthetic;
    int offset = 0;
    for (int t = 1; t <= n_tasks; ++t) {
        // random orthonormal pair (u, v) spanning the task's plane
        Vector u(dims), v(dims);
        for (int d = 0; d < dims; ++d) u(d) = normal(rng);
        for (int d = 0; d < dims; ++d) v(d) = normal(rng);
        u.normalize();
        if (dims > 1) {
            v -= v.dot(u) * u;
            v.normalize();
        } else {
            v.setZero();
        }
        const double phase = angle(rng);
        std::vector<Vector> centres;
        for (int c = 0; c < classes_per_task; ++c) {
            if (dims == 1) {
                centres.push_back(u * (opt.radius * (c - 0.5 * (classes_per_task - 1))));
            } else {
                const double a = phase + 2.0 * std::numbers::pi * c / classes_per_task;
                centres.push_back(opt.radius * (std::cos(a) * u + std::sin(a) * v));
            }
        }
        auto make_set = [&] {
            Dataset ds;
            ds.class_count = classes_per_task;
            ds.images.resize(static_cast<Index>(classes_per_task) * examples_per_class, dims);
            Index row = 0;
            for (int c = 0; c < classes_per_task; ++c)
                for (int e = 0; e < examples_per_class; ++e, ++row) {
                    for (int d = 0; d < dims; ++d) ds.images(row, d) = centres[c](d) + opt.noise * normal(rng);
                    ds.labels.push_back(c);
                }
            return ds;
        };
        TaskData task;
        task.task_id = t;
        task.train = make_set();
        task.validation = make_set();
        task.test = make_set();
        task.classes = {offset, classes_per_task};
        offset += classes_per_task;
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

}  // namespace ucb
