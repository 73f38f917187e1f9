#include "sdsep/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "sdsep/errors.hpp"

namespace sdsep::eval {

template <typename T>
double mse(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size())
        throw ShapeError("mse: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    if (a.empty()) throw ShapeError("mse: empty images");
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += static_cast<long double>(d) * d;
    }
    return double(s / a.size());
}

template <typename T>
double psnr(std::span<const T> a, std::span<const T> b, double max_i) {
    const double m = mse(a, b);
    if (m == 0) return kInfinity;
    return 20.0 * std::log10(max_i / std::sqrt(m));
}

template double mse<float>(std::span<const float>, std::span<const float>);
template double mse<double>(std::span<const double>, std::span<const double>);
template double psnr<float>(std::span<const float>, std::span<const float>, double);
template double psnr<double>(std::span<const double>, std::span<const double>, double);

std::vector<double> unit_range(std::span<const float> image) {
    std::vector<double> out(image.size());
    for (std::size_t i = 0; i < image.size(); ++i)
        out[i] = std::clamp((double(image[i]) + 1.0) / 2.0, 0.0, 1.0);
    return out;
}

double finite_mean(std::span<const double> values) {
    if (values.empty()) return std::nan("");
    double s = 0;
    std::size_t n = 0;
    for (double v : values)
        if (std::isfinite(v)) s += v, ++n;
    return n ? s / double(n) : kInfinity;
}

Match match_sources(const std::vector<std::vector<double>>& estimates,
                    const std::vector<std::vector<double>>& truths, double max_i) {
    const std::size_t K = truths.size();
    if (estimates.size() != K)
        throw ShapeError("match_sources: " + std::to_string(estimates.size()) + " estimates for " +
                         std::to_string(K) + " truths");
    if (K == 0 || K > 4) throw ContractError("match_sources: K must be in [1, 4]");
    std::vector<std::vector<double>> table(K, std::vector<double>(K));
    for (std::size_t t = 0; t < K; ++t)
        for (std::size_t e = 0; e < K; ++e)
            table[t][e] = psnr<double>(estimates[e], truths[t], max_i);

    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    Match best;
    std::size_t best_inf = 0;
    double best_sum = -kInfinity;
    do {
        std::size_t inf = 0;
        double sum = 0;
        for (std::size_t t = 0; t < K; ++t) {
            const double v = table[t][perm[t]];
            if (std::isinf(v)) ++inf;
            else sum += v;
        }
        if (best.permutation.empty() || inf > best_inf || (inf == best_inf && sum > best_sum)) {
            best.permutation = perm;
            best_inf = inf;
            best_sum = sum;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t t = 0; t < K; ++t) best.psnr.push_back(table[t][best.permutation[t]]);
    best.mean = finite_mean(best.psnr);
    return best;
}

const std::vector<std::string>& method_order() {
    static const std::vector<std::string> v{"nmf", "cnmf", "cnn", "sd-L1", "sd-L8", "sd-L32"};
    return v;
}

std::string method_label(const std::string& m) {
    if (m == "nmf") return "NMF";
    if (m == "cnmf") return "Convolutive NMF";
    if (m == "cnn") return "CNN";
    if (m.rfind("sd-L", 0) == 0) return "S-D with " + m.substr(4) + " init.";
    return m;
}

const std::vector<std::string>& restoration_kinds() {
    static const std::vector<std::string> v{"denoising", "inpainting", "completion"};
    return v;
}

const std::vector<std::string>& mixing_kinds() {
    static const std::vector<std::string> v{"deconvolution", "separation", "separation_deconvolution"};
    return v;
}

namespace {

std::size_t rank_of(const std::vector<std::string>& order, const std::string& key) {
    const auto it = std::find(order.begin(), order.end(), key);
    return std::size_t(it - order.begin());
}

std::size_t kind_rank(const std::string& kind) {
    std::vector<std::string> all = restoration_kinds();
    all.insert(all.end(), mixing_kinds().begin(), mixing_kinds().end());
    return rank_of(all, kind);
}

// Orders unknown methods after known ones, alphabetically; sd-L<n> by n.
bool method_less(const std::string& a, const std::string& b) {
    const auto key = [](const std::string& m) {
        const std::size_t r = rank_of(method_order(), m);
        long n = 0;
        if (r == method_order().size() && m.rfind("sd-L", 0) == 0) n = std::atol(m.c_str() + 4);
        return std::make_tuple(r, n, m);
    };
    return key(a) < key(b);
}

}  // namespace

Report aggregate(std::vector<Row> rows) {
    Report r;
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.method != b.method) return method_less(a.method, b.method);
        if (a.kind != b.kind) {
            const auto ka = kind_rank(a.kind), kb = kind_rank(b.kind);
            return ka != kb ? ka < kb : a.kind < b.kind;
        }
        return a.scenario < b.scenario;
    });
    r.rows = std::move(rows);
    for (const auto& row : r.rows) {
        if (r.cells.empty() || r.cells.back().method != row.method || r.cells.back().kind != row.kind)
            r.cells.push_back({row.method, row.kind, 0, 0, 0, 0});
        auto& c = r.cells.back();
        if (row.failed) ++c.failures;
        else if (!std::isfinite(row.mean)) ++c.infinities;
        else {
            c.mean += row.mean;
            ++c.rows;
        }
    }
    for (auto& c : r.cells) c.mean = c.rows ? c.mean / double(c.rows) : std::nan("");
    return r;
}

const Cell* Report::find(const std::string& method, const std::string& kind) const {
    for (const auto& c : cells)
        if (c.method == method && c.kind == kind) return &c;
    return nullptr;
}

namespace {

nlohmann::json number(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

nlohmann::json to_json(const Row& row) {
    nlohmann::json ps = nlohmann::json::array();
    for (double v : row.psnr) ps.push_back(number(v));
    nlohmann::json j{{"method", row.method}, {"kind", row.kind},      {"scenario", row.scenario},
                     {"K", row.K},           {"failed", row.failed}, {"psnr", ps},
                     {"permutation", row.permutation}, {"mean", number(row.mean)}};
    if (row.failed) j["error"] = row.error;
    return j;
}

Row row_from_json(const nlohmann::json& j) {
    // null only ever stands for +infinity here
    const auto value = [](const nlohmann::json& v) { return v.is_null() ? kInfinity : v.get<double>(); };
    Row r;
    r.method = j.at("method").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.scenario = j.at("scenario").get<std::size_t>();
    r.K = j.at("K").get<std::size_t>();
    r.failed = j.at("failed").get<bool>();
    if (r.failed) r.error = j.value("error", std::string());
    for (const auto& v : j.at("psnr")) r.psnr.push_back(value(v));
    r.permutation = j.at("permutation").get<std::vector<std::size_t>>();
    r.mean = value(j.at("mean"));
    return r;
}

nlohmann::json to_json(const Report& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) rows.push_back(to_json(row));
    nlohmann::json aggregates = nlohmann::json::object(), infinities = nlohmann::json::object(),
                   failures = nlohmann::json::object();
    for (const auto& c : r.cells) {
        aggregates[c.method][c.kind] = {{"mean", number(c.mean)}, {"n", c.rows}};
        infinities[c.method][c.kind] = c.infinities;
        failures[c.method][c.kind] = c.failures;
    }
    return {{"psnr_peak", "MAX_I = 1 on [0,1] intensities"},
            {"rows", rows},
            {"aggregates", aggregates},
            {"infinities", infinities},
            {"failures", failures}};
}

std::string render_text(const Report& r) {
    std::ostringstream os;
    os << "PSNR in dB (MAX_I = 1 on [0,1] intensities), mean over scenarios\n";
    const auto table = [&](const char* title, const std::vector<std::string>& kinds) {
        std::vector<std::string> methods;
        for (const auto& c : r.cells)
            if (std::find(kinds.begin(), kinds.end(), c.kind) != kinds.end() &&
                std::find(methods.begin(), methods.end(), c.method) == methods.end())
                methods.push_back(c.method);
        if (methods.empty()) return;
        os << "\n" << title << "\n";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-20s", "method");
        os << buf;
        for (const auto& k : kinds) {
            std::snprintf(buf, sizeof buf, " %26s", k.c_str());
            os << buf;
        }
        os << "\n";
        for (const auto& m : methods) {
            std::snprintf(buf, sizeof buf, "%-20s", method_label(m).c_str());
            os << buf;
            for (const auto& k : kinds) {
                const Cell* c = r.find(m, k);
                std::string cell = "-";
                if (c) {
                    char v[64];
                    if (std::isfinite(c->mean))
                        std::snprintf(v, sizeof v, "%.2f (n=%zu)", c->mean, c->rows);
                    else
                        std::snprintf(v, sizeof v, "n/a (n=0)");
                    cell = v;
                    if (c->infinities) cell += " inf=" + std::to_string(c->infinities);
                    if (c->failures) cell += " fail=" + std::to_string(c->failures);
                }
                std::snprintf(buf, sizeof buf, " %26s", cell.c_str());
                os << buf;
            }
            os << "\n";
        }
    };
    table("Denoising / inpainting / completion", restoration_kinds());
    table("Deconvolution / separation / separation+deconvolution", mixing_kinds());
    return os.str();
}

}  // namespace sdsep::eval
