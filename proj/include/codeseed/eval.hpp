#pragma once

// Ranked-suggestion metrics (top-k accuracy, MRR, macro precision/recall/
// F-measure) and one-way ANOVA with F critical values and p-values.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/models.hpp"
#include "codeseed/vocab.hpp"

namespace codeseed {

struct PredictionRecord {
    std::int32_t target = 0;
    std::vector<std::int32_t> ranked;  // best first, no duplicates, k <= 10
};

// Fraction of records whose target appears in the first k ranked entries.
inline double topk_accuracy(const std::vector<PredictionRecord>& records, int k) {
    if (records.empty()) throw Error("topk_accuracy: no records");
    if (k < 1) throw Error("topk_accuracy: k must be >= 1");
    std::size_t hits = 0;
    for (const PredictionRecord& r : records) {
        const std::size_t limit = std::min<std::size_t>(r.ranked.size(), static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < limit; ++i) {
            if (r.ranked[i] == r.target) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

// Mean reciprocal rank of the target's first appearance, zero when it is
// absent from the ranked list.
inline double mrr(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw Error("mrr: no records");
    double sum = 0.0;
    for (const PredictionRecord& r : records) {
        for (std::size_t i = 0; i < r.ranked.size(); ++i) {
            if (r.ranked[i] == r.target) {
                sum += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    return sum / static_cast<double>(records.size());
}

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f_measure = 0.0;
};

// Macro-averaged precision/recall over the classes that occur as targets,
// from the rank-1 confusion; 0/0 counts as 0. F comes from the macro P and R.
inline Prf macro_prf(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw Error("macro_prf: no records");
    std::map<std::int32_t, std::int64_t> tp, fp, fn;
    std::set<std::int32_t> target_classes;
    for (const PredictionRecord& r : records) {
        if (r.ranked.empty()) throw Error("macro_prf: record without predictions");
        const std::int32_t predicted = r.ranked.front();
        target_classes.insert(r.target);
        if (predicted == r.target) {
            ++tp[r.target];
        } else {
            ++fp[predicted];
            ++fn[r.target];
        }
    }
    double p_sum = 0.0, r_sum = 0.0;
    for (std::int32_t c : target_classes) {
        const double tpc = static_cast<double>(tp.count(c) ? tp[c] : 0);
        const double fpc = static_cast<double>(fp.count(c) ? fp[c] : 0);
        const double fnc = static_cast<double>(fn.count(c) ? fn[c] : 0);
        p_sum += (tpc + fpc) > 0.0 ? tpc / (tpc + fpc) : 0.0;
        r_sum += (tpc + fnc) > 0.0 ? tpc / (tpc + fnc) : 0.0;
    }
    Prf out;
    const double n_classes = static_cast<double>(target_classes.size());
    out.precision = p_sum / n_classes;
    out.recall = r_sum / n_classes;
    out.f_measure = (out.precision + out.recall) > 0.0
                        ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                        : 0.0;
    return out;
}

// ---- F distribution ----

namespace statsdetail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double betacf(double a, double b, double x) {
    constexpr double eps = 1e-15, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace statsdetail

inline double f_cdf(double x, double df1, double df2) {
    if (x <= 0.0) return 0.0;
    return statsdetail::reg_inc_beta(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2));
}

// Upper tail computed directly through the complementary beta argument so
// tiny p-values keep their relative accuracy.
inline double f_sf(double x, double df1, double df2) {
    if (x <= 0.0) return 1.0;
    return statsdetail::reg_inc_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * x));
}

// Inverse CDF by bisection on an expanding bracket, to 1e-10.
inline double f_quantile(double p, double df1, double df2) {
    if (p <= 0.0 || p >= 1.0) throw Error(msg("f_quantile: p must be in (0,1), got ", p));
    double lo = 0.0, hi = 1.0;
    while (f_cdf(hi, df1, df2) < p) {
        hi *= 2.0;
        if (hi > 1e12) throw Error("f_quantile: bracket expansion failed");
    }
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (f_cdf(mid, df1, df2) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// ---- one-way ANOVA ----

struct AnovaResult {
    double ss_between = 0.0, ss_within = 0.0, ss_total = 0.0;
    int df_between = 0, df_within = 0;
    double ms_between = 0.0, ms_within = 0.0;
    double f = 0.0;
    double p_value = 1.0;
    double f_crit = 0.0;
    double alpha = 0.05;

    bool reject_null() const { return f > f_crit && p_value < alpha; }
};

// F and p from an already-computed decomposition.
inline AnovaResult anova_from_ss(double ss_between, double ss_within, int df_between,
                                 int df_within, double alpha = 0.05) {
    if (df_between < 1 || df_within < 1) throw Error("anova_from_ss: invalid degrees of freedom");
    AnovaResult r;
    r.ss_between = ss_between;
    r.ss_within = ss_within;
    r.ss_total = ss_between + ss_within;
    r.df_between = df_between;
    r.df_within = df_within;
    r.ms_between = ss_between / df_between;
    r.ms_within = ss_within / df_within;
    r.alpha = alpha;
    r.f_crit = f_quantile(1.0 - alpha, df_between, df_within);
    if (r.ms_within == 0.0) {
        if (r.ms_between == 0.0) throw Error("anova: all observations identical");
        r.f = std::numeric_limits<double>::infinity();
        r.p_value = 0.0;
        return r;
    }
    r.f = r.ms_between / r.ms_within;
    r.p_value = f_sf(r.f, df_between, df_within);
    return r;
}

inline AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups,
                                double alpha = 0.05) {
    if (groups.size() < 2) throw Error("anova: need at least 2 groups");
    std::size_t n_total = 0;
    double grand_sum = 0.0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw Error("anova: every group needs at least 2 samples");
        n_total += g.size();
        for (double v : g) grand_sum += v;
    }
    const double grand_mean = grand_sum / static_cast<double>(n_total);

    double ss_between = 0.0, ss_within = 0.0;
    for (const auto& g : groups) {
        double mean = 0.0;
        for (double v : g) mean += v;
        mean /= static_cast<double>(g.size());
        ss_between += static_cast<double>(g.size()) * (mean - grand_mean) * (mean - grand_mean);
        for (double v : g) ss_within += (v - mean) * (v - mean);
    }
    return anova_from_ss(ss_between, ss_within, static_cast<int>(groups.size()) - 1,
                         static_cast<int>(n_total - groups.size()), alpha);
}

// ---- model evaluation ----

struct MetricReport {
    double acc1 = 0.0, acc5 = 0.0, acc10 = 0.0;
    double mrr = 0.0;
    double precision = 0.0, recall = 0.0, f_measure = 0.0;
    std::size_t records = 0;
    std::size_t excluded_unk = 0;

    std::string serialize() const {
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "acc1=%.6f\nacc5=%.6f\nacc10=%.6f\nmrr=%.6f\nprecision=%.6f\n"
                      "recall=%.6f\nf_measure=%.6f\nrecords=%zu\nexcluded_unk=%zu\n",
                      acc1, acc5, acc10, mrr, precision, recall, f_measure, records, excluded_unk);
        return std::string(buf);
    }
};

inline MetricReport metrics_from_records(const std::vector<PredictionRecord>& records,
                                         std::size_t excluded_unk = 0) {
    MetricReport report;
    report.records = records.size();
    report.excluded_unk = excluded_unk;
    if (records.empty()) throw Error("evaluation produced no records");
    report.acc1 = topk_accuracy(records, 1);
    report.acc5 = topk_accuracy(records, 5);
    report.acc10 = topk_accuracy(records, 10);
    report.mrr = mrr(records);
    const Prf prf = macro_prf(records);
    report.precision = prf.precision;
    report.recall = prf.recall;
    report.f_measure = prf.f_measure;
    return report;
}

// Runs ranked prediction per test window and aggregates every metric.
// Targets the vocabulary maps to unk are unpredictable by construction and
// are excluded from aggregation but counted.
template <class Model>
MetricReport evaluate_model(const Model& model, const std::vector<typename Model::Window>& test,
                            int k = 10, std::vector<PredictionRecord>* record_log = nullptr) {
    if (test.empty()) throw Error("evaluate_model: empty test set");
    std::vector<PredictionRecord> records;
    records.reserve(test.size());
    std::size_t excluded = 0;
    for (const auto& w : test) {
        if (w.target == Vocabulary::kUnkId) {
            ++excluded;
            continue;
        }
        PredictionRecord r;
        r.target = w.target;
        for (const ScoredToken& s : rank_topk(model.predict_window(w), k)) r.ranked.push_back(s.id);
        records.push_back(std::move(r));
    }
    if (record_log) *record_log = records;
    return metrics_from_records(records, excluded);
}

// Per-record log line: "target_id,rank" with rank -1 when the target is
// missing from the ranked list.
inline std::string serialize_record_log(const std::vector<PredictionRecord>& records) {
    std::string out;
    for (const PredictionRecord& r : records) {
        int rank = -1;
        for (std::size_t i = 0; i < r.ranked.size(); ++i) {
            if (r.ranked[i] == r.target) {
                rank = static_cast<int>(i + 1);
                break;
            }
        }
        out += msg(r.target, ",", rank, "\n");
    }
    return out;
}

}  // namespace codeseed
