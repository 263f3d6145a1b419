#include "exoendo/statcore.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace exoendo {

std::int64_t TabularModel::num_states() const {
    std::int64_t n = 1;
    for (int c : state_cardinalities) n *= c;
    return n;
}

std::vector<int> TabularModel::decode(std::int64_t s) const {
    std::vector<int> v(state_cardinalities.size());
    for (size_t i = 0; i < v.size(); ++i) {
        v[i] = int(s % state_cardinalities[i]);
        s /= state_cardinalities[i];
    }
    return v;
}

std::int64_t TabularModel::encode(const std::vector<int>& values) const {
    std::int64_t s = 0;
    for (size_t i = values.size(); i-- > 0;) s = s * state_cardinalities[i] + values[i];
    return s;
}

void TabularModel::validate() const {
    if (state_cardinalities.empty() || action_cardinality < 1) throw dimension_error("tabular model: empty shape");
    for (int c : state_cardinalities)
        if (c < 1) throw dimension_error("tabular model: cardinality must be positive");
    const std::int64_t ns = num_states();
    if (std::int64_t(joint.size()) != ns * action_cardinality * ns)
        throw dimension_error("tabular model: joint table has wrong size");
    double total = 0;
    for (double p : joint) {
        if (!(p >= 0)) throw numeric_error("tabular model: negative or non-finite probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw numeric_error("tabular model: table does not sum to 1");
}

namespace {

// Mixed-radix code of the selected variables.
struct Projector {
    std::vector<int> vars;
    std::vector<int> card;
    std::int64_t size = 1;
    std::int64_t operator()(const std::vector<int>& v) const {
        std::int64_t c = 0;
        for (size_t i = 0; i < vars.size(); ++i) c = c * card[i] + v[vars[i]];
        return c;
    }
};

Projector make_projector(const std::vector<int>& vars, const std::vector<int>& card) {
    Projector p;
    p.vars = vars;
    for (int v : vars) {
        p.card.push_back(card[v]);
        p.size *= card[v];
    }
    return p;
}

} // namespace

double cmi_tabular(const TabularModel& model, const std::vector<int>& exo_index_set, CmiMode mode,
                   bool* empty_support) {
    const int d = int(model.state_cardinalities.size());
    std::vector<int> xs = exo_index_set;
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::vector<int> es;
    for (int i = 0; i < d; ++i) {
        if (std::binary_search(xs.begin(), xs.end(), i)) continue;
        es.push_back(i);
    }
    for (int i : xs)
        if (i < 0 || i >= d) throw dimension_error("cmi_tabular: index out of range");

    const Projector px = make_projector(xs, model.state_cardinalities);
    const Projector pe = make_projector(es, model.state_cardinalities);
    const std::int64_t ns = model.num_states();
    const int na = model.action_cardinality;
    if (std::int64_t(model.joint.size()) != ns * na * ns) throw dimension_error("cmi_tabular: joint size mismatch");

    std::vector<std::vector<int>> decoded(ns);
    for (std::int64_t s = 0; s < ns; ++s) decoded[s] = model.decode(s);

    // Y code: e, a, and (diachronic) e'.
    const std::int64_t ny = pe.size * na * (mode == CmiMode::diachronic ? pe.size : 1);
    std::unordered_map<std::int64_t, double> pxyx, pxy, pxx, px_;
    double total = 0;
    for (std::int64_t s = 0; s < ns; ++s) {
        const std::int64_t x = px(decoded[s]);
        const std::int64_t e = pe(decoded[s]);
        for (int a = 0; a < na; ++a) {
            for (std::int64_t s2 = 0; s2 < ns; ++s2) {
                const double p = model.joint[model.index(s, a, s2)];
                if (p <= 0) continue;
                const std::int64_t x2 = px(decoded[s2]);
                std::int64_t y = e * na + a;
                if (mode == CmiMode::diachronic) y = y * pe.size + pe(decoded[s2]);
                pxyx[(x * ny + y) * px.size + x2] += p;
                pxy[x * ny + y] += p;
                pxx[x * px.size + x2] += p;
                px_[x] += p;
                total += p;
            }
        }
    }
    if (empty_support) *empty_support = total <= 0;
    if (total <= 0) return 0.0;

    double mi = 0;
    for (const auto& [key, p] : pxyx) {
        const std::int64_t x2 = key % px.size;
        const std::int64_t xy = key / px.size;
        const std::int64_t x = xy / ny;
        const double num = p * px_[x];
        const double den = pxy[xy] * pxx[x * px.size + x2];
        mi += p * std::log(num / den);
    }
    mi /= total;
    return std::max(mi, 0.0);
}

} // namespace exoendo
