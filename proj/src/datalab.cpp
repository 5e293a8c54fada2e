#include "selffed/datalab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace selffed {

void Dataset::validate() const {
    if (images.size() != labels.size() || images.size() != ids.size()) {
        throw SizeMismatch("dataset arrays disagree in length");
    }
    std::unordered_set<uint64_t> seen;
    for (uint64_t id : ids) {
        if (!seen.insert(id).second) throw SizeMismatch("duplicate sample id");
    }
    for (int64_t l : labels) {
        if (l < 0 || l >= num_classes) throw UnknownLabel("label out of range: " + std::to_string(l));
    }
}

namespace {

void render_disc(Tensor& img, double cy, double cx, double radius, double fg) {
    const int64_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            if (dy * dy + dx * dx <= radius * radius) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    img.data[static_cast<size_t>((y * w + x) * c + ch)] = fg;
                }
            }
        }
    }
}

// striped fill with a per-image phase: column parity alternates hi/lo,
// mean (hi+lo)/2. The random phase keeps first-order pixel statistics
// class-blind while the local contrast stays fully informative.
void render_cross(Tensor& img, double cy, double cx, double arm, double thick, double hi,
                  double lo, int64_t phase) {
    const int64_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double dy = std::fabs(static_cast<double>(y) - cy);
            const double dx = std::fabs(static_cast<double>(x) - cx);
            const bool vertical = dx <= thick && dy <= arm;
            const bool horizontal = dy <= thick && dx <= arm;
            if (vertical || horizontal) {
                const double fg = ((x + phase) % 2 == 0) ? hi : lo;
                for (int64_t ch = 0; ch < c; ++ch) {
                    img.data[static_cast<size_t>((y * w + x) * c + ch)] = fg;
                }
            }
        }
    }
}

}  // namespace

Dataset synth_dataset(const SynthSpec& spec, Rng& rng) {
    if (spec.num_classes < 2) throw ValidationError("synth_dataset needs at least 2 classes");
    if (spec.per_class < 1) throw ValidationError("synth_dataset needs per_class >= 1");
    Dataset out;
    out.num_classes = spec.num_classes;
    const double side = static_cast<double>(std::min(spec.height, spec.width));
    uint64_t next_id = 0;
    for (int64_t cls = 0; cls < spec.num_classes; ++cls) {
        for (int64_t i = 0; i < spec.per_class; ++i) {
            Tensor img({spec.height, spec.width, spec.channels}, 0.1);
            const double cy = rng.uniform(0.35, 0.65) * static_cast<double>(spec.height);
            const double cx = rng.uniform(0.35, 0.65) * static_cast<double>(spec.width);
            const double size_scale = rng.uniform(0.8, 1.2);
            // discs carry a solid fill, crosses a striped one with the same
            // mean, and the bar thickness matches the disc mass; classes
            // differ in shape and local texture, not in total intensity
            if (cls % 2 == 0) {
                render_disc(img, cy, cx, 0.27 * side * size_scale, 0.6);
            } else {
                const int64_t phase = static_cast<int64_t>(rng.below(2));
                render_cross(img, cy, cx, 0.34 * side * size_scale,
                             0.095 * side * size_scale, 0.9, 0.3, phase);
            }
            if (spec.noise > 0.0) {
                for (auto& v : img.data) {
                    v = std::clamp(v + rng.normal(0.0, spec.noise), 0.0, 1.0);
                }
            }
            out.images.push_back(std::move(img));
            out.labels.push_back(cls);
            out.ids.push_back(next_id++);
        }
    }
    out.validate();
    return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction, Rng& rng) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
        throw FractionOutOfRange("test_fraction outside [0,1)");
    }
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(data.num_classes));
    for (size_t i = 0; i < data.size(); ++i) {
        by_class[static_cast<size_t>(data.labels[i])].push_back(i);
    }
    Dataset train, test;
    train.num_classes = test.num_classes = data.num_classes;
    train.split = SplitTag::kTrain;
    test.split = SplitTag::kTest;
    for (auto& members : by_class) {
        std::vector<size_t> order = members;
        rng.shuffle(order);
        const size_t n_test = static_cast<size_t>(
            std::llround(test_fraction * static_cast<double>(order.size())));
        for (size_t k = 0; k < order.size(); ++k) {
            Dataset& dst = (k < n_test) ? test : train;
            dst.images.push_back(data.images[order[k]]);
            dst.labels.push_back(data.labels[order[k]]);
            dst.ids.push_back(data.ids[order[k]]);
        }
    }
    return {std::move(train), std::move(test)};
}

void PartitionPlan::validate(const Dataset& data) const {
    for (const auto& row : rho) {
        double s = 0.0;
        for (double v : row) {
            if (v < 0.0) throw ValidationError("negative partition proportion");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9) throw ValidationError("partition row does not sum to 1");
    }
    std::unordered_set<uint64_t> seen;
    size_t total = 0;
    for (const auto& shard : assignment) {
        total += shard.size();
        for (uint64_t id : shard) {
            if (!seen.insert(id).second) throw ValidationError("sample assigned to two clients");
        }
    }
    if (total != data.size()) throw ValidationError("partition does not cover the dataset");
}

std::string PartitionPlan::to_manifest_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["clients"] = num_clients;
    j["delta"] = delta;
    j["rho"] = rho;
    nlohmann::json assign = nlohmann::json::object();
    for (size_t m = 0; m < assignment.size(); ++m) {
        assign[std::to_string(m)] = assignment[m];
    }
    j["assignment"] = assign;
    return j.dump(2);
}

PartitionPlan dirichlet_partition(const Dataset& data, int64_t num_clients, double delta,
                                  Rng& rng) {
    if (num_clients < 1) throw ValidationError("need at least one client");
    if (delta <= 0.0) throw ValidationError("delta must be > 0");
    PartitionPlan plan;
    plan.num_clients = num_clients;
    plan.delta = delta;
    plan.assignment.resize(static_cast<size_t>(num_clients));

    std::vector<std::vector<uint64_t>> by_class(static_cast<size_t>(data.num_classes));
    for (size_t i = 0; i < data.size(); ++i) {
        by_class[static_cast<size_t>(data.labels[i])].push_back(data.ids[i]);
    }

    for (int64_t cls = 0; cls < data.num_classes; ++cls) {
        auto& members = by_class[static_cast<size_t>(cls)];
        if (members.empty()) {
            throw TooFewSamples("class " + std::to_string(cls) + " has no samples");
        }
        rng.shuffle(members);
        std::vector<double> props = num_clients == 1 ? std::vector<double>{1.0}
                                                     : rng.dirichlet(delta, static_cast<int>(num_clients));
        plan.rho.push_back(props);

        // largest-remainder rounding of proportions into integer counts
        const int64_t n = static_cast<int64_t>(members.size());
        std::vector<int64_t> counts(static_cast<size_t>(num_clients));
        std::vector<std::pair<double, int64_t>> remainders;
        int64_t assigned = 0;
        for (int64_t m = 0; m < num_clients; ++m) {
            const double want = props[static_cast<size_t>(m)] * static_cast<double>(n);
            counts[static_cast<size_t>(m)] = static_cast<int64_t>(std::floor(want));
            assigned += counts[static_cast<size_t>(m)];
            remainders.emplace_back(want - std::floor(want), m);
        }
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int64_t k = 0; k < n - assigned; ++k) {
            ++counts[static_cast<size_t>(remainders[static_cast<size_t>(k)].second)];
        }

        size_t offset = 0;
        for (int64_t m = 0; m < num_clients; ++m) {
            for (int64_t k = 0; k < counts[static_cast<size_t>(m)]; ++k) {
                plan.assignment[static_cast<size_t>(m)].push_back(members[offset++]);
            }
        }
    }
    plan.validate(data);
    return plan;
}

HeterogeneityReport heterogeneity_score(const PartitionPlan& plan, const Dataset& data) {
    std::unordered_map<uint64_t, int64_t> label_of;
    for (size_t i = 0; i < data.size(); ++i) label_of[data.ids[i]] = data.labels[i];

    const size_t classes = static_cast<size_t>(data.num_classes);
    std::vector<std::vector<double>> dist;
    for (const auto& shard : plan.assignment) {
        if (shard.empty()) continue;
        std::vector<double> hist(classes, 0.0);
        for (uint64_t id : shard) hist[static_cast<size_t>(label_of.at(id))] += 1.0;
        for (auto& v : hist) v /= static_cast<double>(shard.size());
        dist.push_back(std::move(hist));
    }

    HeterogeneityReport rep;
    for (const auto& h : dist) {
        double e = 0.0;
        for (double p : h) {
            if (p > 0.0) e -= p * std::log(p);
        }
        rep.mean_entropy += e;
    }
    if (!dist.empty()) rep.mean_entropy /= static_cast<double>(dist.size());
    for (size_t a = 0; a < dist.size(); ++a) {
        for (size_t b = a + 1; b < dist.size(); ++b) {
            double tv = 0.0;
            for (size_t c = 0; c < classes; ++c) tv += std::fabs(dist[a][c] - dist[b][c]);
            rep.max_pairwise_tv = std::max(rep.max_pairwise_tv, 0.5 * tv);
        }
    }
    rep.score = std::log(static_cast<double>(data.num_classes)) - rep.mean_entropy;
    return rep;
}

LabelSplit subsample_labels(const std::vector<uint64_t>& shard_ids,
                            const std::vector<int64_t>& shard_labels, double fraction, Rng& rng) {
    if (fraction <= 0.0 || fraction > 1.0) {
        throw FractionOutOfRange("label fraction must lie in (0,1]");
    }
    if (shard_ids.size() != shard_labels.size()) {
        throw SizeMismatch("shard ids and labels disagree");
    }
    const int64_t n = static_cast<int64_t>(shard_ids.size());
    // ceil(fraction * n), with near-integer products snapped first so that
    // binary representation noise (0.3 * 10 = 2.999...96) cannot shift the count
    const double want = fraction * static_cast<double>(n);
    const double snapped = std::round(want);
    const int64_t want_total = (std::fabs(want - snapped) < 1e-9)
                                   ? static_cast<int64_t>(snapped)
                                   : static_cast<int64_t>(std::ceil(want));

    std::unordered_map<int64_t, std::vector<uint64_t>> by_class;
    std::vector<int64_t> class_order;
    for (size_t i = 0; i < shard_ids.size(); ++i) {
        auto& v = by_class[shard_labels[i]];
        if (v.empty()) class_order.push_back(shard_labels[i]);
        v.push_back(shard_ids[i]);
    }
    std::sort(class_order.begin(), class_order.end());

    // per-class targets by largest remainder, totals forced to want_total
    std::vector<int64_t> take(class_order.size());
    std::vector<std::pair<double, size_t>> rem;
    int64_t assigned = 0;
    for (size_t c = 0; c < class_order.size(); ++c) {
        const double want = fraction * static_cast<double>(by_class[class_order[c]].size());
        take[c] = static_cast<int64_t>(std::floor(want));
        assigned += take[c];
        rem.emplace_back(want - std::floor(want), c);
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (size_t k = 0; assigned < want_total && k < rem.size(); ++k, ++assigned) {
        ++take[rem[k].second];
    }
    // cap at the class size (possible only in degenerate roundings)
    LabelSplit out;
    for (size_t c = 0; c < class_order.size(); ++c) {
        auto members = by_class[class_order[c]];
        rng.shuffle(members);
        const size_t keep = std::min<size_t>(static_cast<size_t>(take[c]), members.size());
        for (size_t k = 0; k < members.size(); ++k) {
            (k < keep ? out.labeled : out.unlabeled).push_back(members[k]);
        }
    }
    std::sort(out.labeled.begin(), out.labeled.end());
    std::sort(out.unlabeled.begin(), out.unlabeled.end());
    return out;
}

namespace {

int read_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments per the netpbm grammar
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw UnreadableImage("unexpected end of header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw UnreadableImage("malformed header token");
    return value;
}

}  // namespace

Tensor load_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UnreadableImage("cannot open " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    int64_t channels;
    if (m0 == 'P' && m1 == '5') {
        channels = 1;
    } else if (m0 == 'P' && m1 == '6') {
        channels = 3;
    } else {
        throw UnreadableImage(path + ": not a binary PGM/PPM file");
    }
    const int64_t w = read_pnm_token(f);
    const int64_t h = read_pnm_token(f);
    const int64_t maxval = read_pnm_token(f);
    if (maxval <= 0 || maxval > 255) {
        throw UnreadableImage(path + ": unsupported maxval " + std::to_string(maxval));
    }
    const size_t n = static_cast<size_t>(h * w * channels);
    std::vector<unsigned char> raw(n);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n) throw UnreadableImage(path + ": truncated pixel data");
    Tensor img({h, w, channels});
    for (size_t i = 0; i < n; ++i) {
        img.data[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
    }
    return img;
}

void save_pnm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || (image.shape[2] != 1 && image.shape[2] != 3)) {
        throw SizeMismatch("save_pnm needs H x W x 1 or H x W x 3");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f << (image.shape[2] == 1 ? "P5" : "P6") << "\n"
      << image.shape[1] << " " << image.shape[0] << "\n255\n";
    for (double v : image.data) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
    if (!f) throw IoError("write failed: " + path);
}

Dataset load_folder(const std::string& dir, const std::string& manifest_path,
                    int64_t expect_h, int64_t expect_w, int64_t expect_c,
                    int64_t num_classes) {
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open manifest: " + manifest_path);
    Dataset out;
    out.num_classes = num_classes;
    uint64_t next_id = 0;
    std::string line;
    while (std::getline(mf, line)) {
        const size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        std::istringstream ls(line);
        std::string file;
        int64_t label;
        if (!(ls >> file >> label)) throw ParseError("bad manifest line: " + line);
        if (label < 0 || label >= num_classes) {
            throw UnknownLabel("manifest label " + std::to_string(label) + " for " + file);
        }
        Tensor img = load_pnm(dir + "/" + file);
        if (img.shape[0] != expect_h || img.shape[1] != expect_w || img.shape[2] != expect_c) {
            throw SizeMismatch(file + ": got " + shape_str(img.shape));
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(label);
        out.ids.push_back(next_id++);
    }
    out.validate();
    return out;
}

}  // namespace selffed
