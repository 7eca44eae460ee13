#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lifelong/errors.hpp"
#include "lifelong/rng.hpp"
#include "lifelong/tensor.hpp"

namespace lifelong {

struct LabeledDataset {
    std::vector<double> features;  // row-major N x dim
    std::vector<int> labels;       // global class ids, one per row
    std::size_t dim = 0;
    std::vector<std::string> class_names;
    std::vector<int> superclass_map;  // class id -> coarse group; empty when unknown

    std::size_t size() const { return dim == 0 ? 0 : features.size() / dim; }
    std::size_t num_classes() const { return class_names.size(); }
    bool has_superclasses() const { return !superclass_map.empty(); }

    void validate() const {
        if (dim == 0 || features.size() % dim != 0) throw ContractError("dataset feature matrix is ragged");
        if (labels.size() != size()) throw ContractError("dataset has " + std::to_string(labels.size()) +
                                                         " labels for " + std::to_string(size()) + " rows");
        std::vector<std::size_t> counts(num_classes(), 0);
        for (int l : labels) {
            if (l < 0 || static_cast<std::size_t>(l) >= num_classes())
                throw ContractError("label " + std::to_string(l) + " outside " + std::to_string(num_classes()) +
                                    " classes");
            ++counts[static_cast<std::size_t>(l)];
        }
        for (std::size_t c = 0; c < counts.size(); ++c)
            if (counts[c] == 0) throw ContractError("class " + std::to_string(c) + " has no samples");
        if (!superclass_map.empty() && superclass_map.size() != num_classes())
            throw ContractError("superclass map covers " + std::to_string(superclass_map.size()) + " of " +
                                std::to_string(num_classes()) + " classes");
    }
};

namespace detail {
inline std::string padded_class_name(std::size_t c, std::size_t total) {
    std::size_t width = std::to_string(total > 0 ? total - 1 : 0).size();
    std::string n = std::to_string(c);
    return "class" + std::string(width - n.size(), '0') + n;
}
}  // namespace detail

// Gaussian class clusters (sigma = 1) with means on a sphere of radius `sep`.
// Mean directions are planted around ceil(C/5) group centers so the coarse
// groups carry real angular structure; `spread` controls how tightly a
// group's classes bunch around their center. Groups interleave across class
// ids (c mod G), which keeps name order well mixed with respect to groups.
inline LabeledDataset make_synthetic(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                                     double sep, Rng& rng, double spread = 0.25) {
    if (num_classes == 0 || dim == 0 || per_class == 0)
        throw ConfigError("synthetic dataset needs positive class count, dim, and samples per class");
    if (sep < 0.0 || !std::isfinite(sep)) throw ConfigError("class separation must be finite and >= 0");
    if (spread < 0.0) throw ConfigError("group spread must be >= 0");

    auto unit = [&](std::vector<double> v) {
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 < 1e-24) v[0] = 1.0, n2 = 1.0;
        double inv = 1.0 / std::sqrt(n2);
        for (double& x : v) x *= inv;
        return v;
    };
    auto gauss_vec = [&]() {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        return v;
    };

    const std::size_t groups = (num_classes + 4) / 5;
    std::vector<std::vector<double>> centers(groups);
    for (auto& c : centers) c = unit(gauss_vec());

    LabeledDataset ds;
    ds.dim = dim;
    ds.superclass_map.resize(num_classes);
    std::vector<std::vector<double>> means(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t g = c % groups;
        ds.superclass_map[c] = static_cast<int>(g);
        std::vector<double> dir = gauss_vec();
        for (std::size_t j = 0; j < dim; ++j) dir[j] = centers[g][j] + spread * dir[j];
        dir = unit(std::move(dir));
        means[c].resize(dim);
        for (std::size_t j = 0; j < dim; ++j) means[c][j] = sep * dir[j];
        ds.class_names.push_back(detail::padded_class_name(c, num_classes));
    }

    ds.features.reserve(num_classes * per_class * dim);
    ds.labels.reserve(num_classes * per_class);
    for (std::size_t c = 0; c < num_classes; ++c)
        for (std::size_t s = 0; s < per_class; ++s) {
            for (std::size_t j = 0; j < dim; ++j) ds.features.push_back(means[c][j] + rng.normal());
            ds.labels.push_back(static_cast<int>(c));
        }
    ds.validate();
    return ds;
}

// ---- CSV ----

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    for (std::size_t j = 0; j < ds.dim; ++j) f << "f" << j << ",";
    f << "label\n";
    char buf[64];
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t j = 0; j < ds.dim; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features[r * ds.dim + j]);
            f << buf << ",";
        }
        f << ds.labels[r] << "\n";
    }
    if (!f.good()) throw InputError("write failed for '" + path + "'");
}

inline LabeledDataset load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ":1: missing header row");
    std::size_t cols = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (cols < 2) throw ParseError(path + ":1: need at least one feature column plus the label column");

    LabeledDataset ds;
    ds.dim = cols - 1;
    std::size_t lineno = 1;
    int max_label = -1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t got = 0;
        while (std::getline(ss, cell, ',')) {
            ++got;
            if (got > cols)
                throw ParseError(path + ":" + std::to_string(lineno) + ": row has more than " +
                                 std::to_string(cols) + " columns");
            const char* s = cell.c_str();
            char* end = nullptr;
            if (got < cols) {
                double v = std::strtod(s, &end);
                if (end == s || *end != '\0')
                    throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
                ds.features.push_back(v);
            } else {
                long l = std::strtol(s, &end, 10);
                if (end == s || *end != '\0' || l < 0)
                    throw ParseError(path + ":" + std::to_string(lineno) + ": bad label '" + cell + "'");
                ds.labels.push_back(static_cast<int>(l));
                max_label = std::max(max_label, static_cast<int>(l));
            }
        }
        if (got != cols)
            throw ParseError(path + ":" + std::to_string(lineno) + ": row has " + std::to_string(got) +
                             " columns, header declares " + std::to_string(cols));
    }
    if (ds.labels.empty()) throw ParseError(path + ": no data rows");
    for (int c = 0; c <= max_label; ++c)
        ds.class_names.push_back(detail::padded_class_name(static_cast<std::size_t>(c),
                                                           static_cast<std::size_t>(max_label) + 1));
    try {
        ds.validate();
    } catch (const ContractError& e) {
        throw ParseError(path + ": " + e.what());
    }
    return ds;
}

// two-column CSV "class,group"; optional header line is skipped
inline void load_superclass_map(LabeledDataset& ds, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::vector<int> map(ds.num_classes(), -1);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'class,group'");
        char* end = nullptr;
        long cls = std::strtol(a.c_str(), &end, 10);
        if (end == a.c_str() || *end != '\0') {
            if (lineno == 1) continue;  // header
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad class id '" + a + "'");
        }
        long grp = std::strtol(b.c_str(), &end, 10);
        if (end == b.c_str() || *end != '\0' || grp < 0)
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad group id '" + b + "'");
        if (cls < 0 || static_cast<std::size_t>(cls) >= map.size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": class " + std::to_string(cls) +
                             " outside dataset's " + std::to_string(map.size()) + " classes");
        map[static_cast<std::size_t>(cls)] = static_cast<int>(grp);
    }
    for (std::size_t c = 0; c < map.size(); ++c)
        if (map[c] < 0) throw ParseError(path + ": class " + std::to_string(c) + " missing from map");
    ds.superclass_map = std::move(map);
}

// ---- IDX (big-endian image/label binaries) ----

namespace detail {
inline std::uint32_t read_be32(std::istream& f, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(path + ": truncated while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}
}  // namespace detail

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw InputError("cannot open '" + images_path + "'");
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw InputError("cannot open '" + labels_path + "'");

    const std::uint32_t im = detail::read_be32(fi, images_path, "magic");
    if (im != 0x00000803u)
        throw ParseError(images_path + ": bad image magic 0x" + [&] {
            char b[16];
            std::snprintf(b, sizeof b, "%08x", im);
            return std::string(b);
        }() + " (want 00000803)");
    const std::uint32_t n_img = detail::read_be32(fi, images_path, "image count");
    const std::uint32_t rows = detail::read_be32(fi, images_path, "row count");
    const std::uint32_t cols = detail::read_be32(fi, images_path, "column count");

    const std::uint32_t lm = detail::read_be32(fl, labels_path, "magic");
    if (lm != 0x00000801u) throw ParseError(labels_path + ": bad label magic (want 00000801)");
    const std::uint32_t n_lab = detail::read_be32(fl, labels_path, "label count");
    if (n_img != n_lab)
        throw ParseError(images_path + ": " + std::to_string(n_img) + " images but " + std::to_string(n_lab) +
                         " labels in " + labels_path);
    if (n_img == 0) throw ParseError(images_path + ": empty image set");

    LabeledDataset ds;
    ds.dim = static_cast<std::size_t>(rows) * cols;
    if (ds.dim == 0) throw ParseError(images_path + ": zero image dimensions");
    const std::size_t n = n_img;
    std::vector<unsigned char> pix(ds.dim);
    int max_label = -1;
    ds.features.reserve(n * ds.dim);
    for (std::size_t i = 0; i < n; ++i) {
        if (!fi.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(ds.dim)))
            throw ParseError(images_path + ": truncated at image " + std::to_string(i));
        for (unsigned char p : pix) ds.features.push_back(p / 255.0);
        char lab;
        if (!fl.read(&lab, 1)) throw ParseError(labels_path + ": truncated at label " + std::to_string(i));
        ds.labels.push_back(static_cast<unsigned char>(lab));
        max_label = std::max(max_label, static_cast<int>(static_cast<unsigned char>(lab)));
    }
    for (int c = 0; c <= max_label; ++c)
        ds.class_names.push_back(detail::padded_class_name(static_cast<std::size_t>(c),
                                                           static_cast<std::size_t>(max_label) + 1));
    try {
        ds.validate();
    } catch (const ContractError& e) {
        throw ParseError(images_path + ": " + e.what());
    }
    return ds;
}

// ---- task streams ----

enum class Ordering { alphabetical, seeded_random, coarse };

inline const char* ordering_name(Ordering o) {
    switch (o) {
        case Ordering::alphabetical: return "alphabetical";
        case Ordering::seeded_random: return "seeded_random";
        case Ordering::coarse: return "coarse";
    }
    return "alphabetical";
}

inline Ordering ordering_from_name(const std::string& s) {
    if (s == "alphabetical") return Ordering::alphabetical;
    if (s == "seeded_random") return Ordering::seeded_random;
    if (s == "coarse") return Ordering::coarse;
    throw ConfigError("unknown ordering '" + s + "' (expected alphabetical|seeded_random|coarse)");
}

struct TaskSpec {
    std::vector<int> classes;  // global ids, order defines local label indices
    std::vector<std::size_t> train_idx, val_idx, test_idx;
};

struct TaskStream {
    std::vector<TaskSpec> tasks;
    Ordering ordering = Ordering::seeded_random;
    std::size_t classes_per_task = 0;
};

// Chunk the ordered class list into tasks and carve per-class train/val/test
// splits. Validation is a class-balanced tenth of the training pool. A
// trailing remainder of classes forms a final smaller task.
inline TaskStream build_stream(const LabeledDataset& ds, std::size_t classes_per_task, Ordering ordering,
                               std::uint64_t seed, double test_fraction = 0.2) {
    ds.validate();
    if (classes_per_task == 0) throw ConfigError("classes_per_task must be positive");
    if (!(test_fraction >= 0.0) || test_fraction >= 1.0)
        throw ConfigError("test fraction must lie in [0, 1)");
    const std::size_t C = ds.num_classes();

    std::vector<int> order(C);
    std::iota(order.begin(), order.end(), 0);
    switch (ordering) {
        case Ordering::alphabetical:
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return ds.class_names[static_cast<std::size_t>(a)] < ds.class_names[static_cast<std::size_t>(b)];
            });
            break;
        case Ordering::seeded_random: {
            Rng r(seed);
            r.shuffle(order);
            break;
        }
        case Ordering::coarse: {
            if (!ds.has_superclasses())
                throw ConfigError("coarse ordering needs a superclass map on the dataset");
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                int ga = ds.superclass_map[static_cast<std::size_t>(a)];
                int gb = ds.superclass_map[static_cast<std::size_t>(b)];
                if (ga != gb) return ga < gb;
                return ds.class_names[static_cast<std::size_t>(a)] < ds.class_names[static_cast<std::size_t>(b)];
            });
            break;
        }
    }

    std::vector<std::vector<std::size_t>> rows_of(C);
    for (std::size_t r = 0; r < ds.size(); ++r) rows_of[static_cast<std::size_t>(ds.labels[r])].push_back(r);

    TaskStream stream;
    stream.ordering = ordering;
    stream.classes_per_task = classes_per_task;
    for (std::size_t base = 0; base < C; base += classes_per_task) {
        TaskSpec spec;
        for (std::size_t i = base; i < std::min(C, base + classes_per_task); ++i)
            spec.classes.push_back(order[i]);
        for (int cls : spec.classes) {
            std::vector<std::size_t> rows = rows_of[static_cast<std::size_t>(cls)];
            Rng r(mix_seed(mix_seed(seed, 0xA11D0C5ull), static_cast<std::uint64_t>(cls)));
            r.shuffle(rows);
            const std::size_t n = rows.size();
            const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
            const std::size_t pool = n - n_test;
            const std::size_t n_val = pool >= 2 ? std::max<std::size_t>(1, pool / 10) : 0;
            for (std::size_t i = 0; i < n_test; ++i) spec.test_idx.push_back(rows[i]);
            for (std::size_t i = n_test; i < n_test + n_val; ++i) spec.val_idx.push_back(rows[i]);
            for (std::size_t i = n_test + n_val; i < n; ++i) spec.train_idx.push_back(rows[i]);
        }
        stream.tasks.push_back(std::move(spec));
    }
    return stream;
}

// ---- materialization helpers ----

inline Tensor gather_features(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
    Tensor X = Tensor::zeros({rows.size(), ds.dim});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < ds.dim; ++j)
            X.values()[i * ds.dim + j] = ds.features[rows[i] * ds.dim + j];
    return X;
}

inline std::vector<int> gather_labels(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(ds.labels[r]);
    return out;
}

inline std::vector<int> to_local_labels(const std::vector<int>& global, const std::vector<int>& class_list) {
    std::vector<int> out;
    out.reserve(global.size());
    for (int g : global) {
        auto it = std::find(class_list.begin(), class_list.end(), g);
        if (it == class_list.end())
            throw LookupError("class " + std::to_string(g) + " is not part of this task");
        out.push_back(static_cast<int>(it - class_list.begin()));
    }
    return out;
}

}  // namespace lifelong
