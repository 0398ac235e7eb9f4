#pragma once

// Rank and classification metrics. NDCG uses gain 2^grade - 1 with discount
// 1/log2(rank + 1); MRR and MAP binarize at grade >= 1. Queries without any
// relevant judged table are excluded from all per-query means and counted as
// skipped. Rankings break score ties by ascending table id so reports are
// deterministic.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tabmatch/tensor.hpp"

namespace tabmatch {

struct ScoredTable {
    std::string table_id;
    double score = 0.0;
    int grade = 0;
};

// grades of a query's judged tables in ranked order
inline std::vector<int> ranked_grades(std::vector<ScoredTable> scored) {
    std::sort(scored.begin(), scored.end(), [](const ScoredTable& a, const ScoredTable& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.table_id < b.table_id;
    });
    std::vector<int> grades;
    grades.reserve(scored.size());
    for (const ScoredTable& s : scored) grades.push_back(s.grade);
    return grades;
}

inline double dcg_at_k(const std::vector<int>& grades, int k) {
    double dcg = 0.0;
    const int n = std::min<int>(k, static_cast<int>(grades.size()));
    for (int r = 0; r < n; ++r)
        dcg += (std::pow(2.0, grades[static_cast<size_t>(r)]) - 1.0) / std::log2(r + 2.0);
    return dcg;
}

inline double ndcg_at_k(const std::vector<int>& grades, int k) {
    std::vector<int> ideal(grades);
    std::sort(ideal.begin(), ideal.end(), std::greater<int>());
    const double idcg = dcg_at_k(ideal, k);
    if (idcg == 0.0) return 0.0;
    return dcg_at_k(grades, k) / idcg;
}

inline double reciprocal_rank(const std::vector<int>& grades) {
    for (size_t r = 0; r < grades.size(); ++r)
        if (grades[r] >= 1) return 1.0 / static_cast<double>(r + 1);
    return 0.0;
}

inline double average_precision(const std::vector<int>& grades) {
    int relevant_total = 0;
    for (int g : grades)
        if (g >= 1) ++relevant_total;
    if (relevant_total == 0) return 0.0;
    double sum = 0.0;
    int hits = 0;
    for (size_t r = 0; r < grades.size(); ++r) {
        if (grades[r] >= 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / relevant_total;
}

struct RetrievalMetrics {
    double ndcg = 0.0;
    double mrr = 0.0;
    double map = 0.0;
    int evaluated_queries = 0;
    int skipped_queries = 0;  // queries with no relevant judged table
};

inline RetrievalMetrics retrieval_metrics(const std::vector<std::vector<int>>& per_query_grades,
                                          int k) {
    RetrievalMetrics m;
    for (const std::vector<int>& grades : per_query_grades) {
        const bool has_relevant = std::any_of(grades.begin(), grades.end(),
                                              [](int g) { return g >= 1; });
        if (!has_relevant) {
            ++m.skipped_queries;
            continue;
        }
        m.ndcg += ndcg_at_k(grades, k);
        m.mrr += reciprocal_rank(grades);
        m.map += average_precision(grades);
        ++m.evaluated_queries;
    }
    if (m.evaluated_queries > 0) {
        m.ndcg /= m.evaluated_queries;
        m.mrr /= m.evaluated_queries;
        m.map /= m.evaluated_queries;
    }
    return m;
}

struct ClassificationMetrics {
    double macro_p = 0.0;
    double macro_r = 0.0;
    double macro_f = 0.0;
    double accuracy = 0.0;
};

// Two-class macro averages; precision/recall/F of a class default to 0 when
// their denominator is 0.
inline ClassificationMetrics classification_metrics(const std::vector<int>& preds,
                                                    const std::vector<int>& labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw UsageError("classification_metrics: empty or mismatched inputs");
    int correct = 0;
    ClassificationMetrics m;
    for (int cls = 0; cls < 2; ++cls) {
        int tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            const bool pred_is = preds[i] == cls;
            const bool label_is = labels[i] == cls;
            if (pred_is && label_is) ++tp;
            if (pred_is && !label_is) ++fp;
            if (!pred_is && label_is) ++fn;
        }
        const double p = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double r = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
        m.macro_p += p / 2.0;
        m.macro_r += r / 2.0;
        m.macro_f += f / 2.0;
    }
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++correct;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
    return m;
}

}  // namespace tabmatch
