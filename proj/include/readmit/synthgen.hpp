#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "readmit/claims.hpp"
#include "readmit/dates.hpp"

namespace readmit {

// ---------------------------------------------------------------------------
// Synthetic claims cohort with a planted, analytically tractable risk signal.
//
// Every beneficiary carries an integer risk score k:
//   k = |chronic chapters| + 1[esrd entitlement] + 1[high-obesity county]
// where each of the six risky diagnosis chapters joins the chronic profile
// independently with probability q.  A single readmission chain is generated
// per beneficiary: after each inpatient stay the next readmission occurs with
// hazard h_k = sigmoid(logit(base_rate) + signal_strength * k), chains capped
// at kChainCap stays.  Because the chain is truncated-geometric, the expected
// event count, the event-level positive rate, and the AUC of the best possible
// score (one that recovers k exactly) all have closed forms; q is solved by
// bisection so the positive rate lands on 1 / (1 + label_skew).
// ---------------------------------------------------------------------------

struct CohortConfig {
    int64_t n_beneficiaries = 1000;
    std::string start_date = "2008-01-01";
    std::string end_date = "2010-12-31";
    uint64_t seed = 1;
    double base_readmission_rate = 0.003; // chain hazard at k = 0
    double signal_strength = 2.0;         // logit increment per unit of risk
    double label_skew = 3.0;              // negatives per positive, event level
    double shift_strength = 0.0;          // fraction of codes remapped across chapters
    std::string era_cutoff = "2010-01-01"; // claims before this use the old file layout
};

inline constexpr int kChainCap = 10;          // max inpatient stays per chain
inline constexpr double kExtraStayProb = 0.3; // chance of a lone follow-up admission >30d later
inline constexpr double kTransferProb = 0.15; // readmissions that arrive as same-day transfers
inline constexpr double kEsrdProb = 0.1;
inline constexpr double kObesityRiskThreshold = 0.32;
inline constexpr int kRiskyChapters[] = {2, 3, 5, 7, 8, 10};
inline constexpr int kNumRiskyChapters = 6;
// widest possible chain: kChainCap stays of <=7 days, gaps <=30d, plus one
// follow-up admission up to 240 + 7 days later
inline constexpr int kChainSpanBudgetDays = 600;
inline constexpr int kChainWarmupDays = 120; // room for history claims before the chain

// Deterministic code universe shared by every cohort (fixed internal seed), so
// that drift remaps mean the same thing across independently generated cohorts.
struct CodeUniverse {
    std::vector<std::string> icd_codes;              // all clinical + V/E codes
    std::unordered_map<std::string, int> chapter_of; // 1..17, 18 = V, 19 = E
    std::vector<std::vector<std::string>> by_chapter; // index 0 unused
    std::vector<std::string> hcpcs_codes;
};

const CodeUniverse &code_universe();

// maps a fraction of the ICD universe onto codes from other chapters;
// deterministic in shift_strength alone
std::unordered_map<std::string, std::string> build_drift_remap(double shift_strength);

struct GroundTruth {
    int risk_score = 0;
    double hazard = 0.0;
    std::vector<int> chronic_chapters;
    bool esrd = false;
    bool risky_county = false;
};

struct CohortStats {
    double chronic_q = 0.0;              // calibrated chapter-inclusion probability
    double expected_stays = 0.0;         // mean chain length across the risk mixture
    double implied_positive_rate = 0.0;  // analytic event-level positive rate
    double analytic_bayes_auc = 0.0;     // AUC of a perfect risk-score ranker
    double expected_events_per_beneficiary = 0.0; // includes follow-up admissions
};

struct Cohort {
    CohortConfig config;
    CohortStats stats;
    std::vector<Beneficiary> beneficiaries;
    std::vector<CountyStats> counties;
    std::vector<ClaimRecord> claims;
    std::unordered_map<std::string, GroundTruth> ground_truth;
};

// --- closed-form pieces (exposed for the unit-test oracles) ----------------

double chain_hazard(double base_rate, double signal_strength, int risk_score);
// E[min(Geometric(1-h), cap)] = (1 - h^cap) / (1 - h)
double expected_chain_stays(double hazard, int cap);
// P(k) for k = 0..kNumRiskyChapters+2 given chapter prob q, esrd prob, and the
// fraction of beneficiaries living in high-obesity counties
std::vector<double> risk_distribution(double chronic_q, double esrd_prob, double risky_county_frac);
// event-level positive rate of the mixture: (E-1) / (E + extra_stay_prob)
double implied_event_positive_rate(const std::vector<double> &risk_dist, double base_rate,
                                   double signal_strength, int cap, double extra_stay_prob);
// Mann-Whitney AUC of ranking events by their beneficiary's true risk score
double analytic_bayes_auc(const std::vector<double> &risk_dist, double base_rate,
                          double signal_strength, int cap, double extra_stay_prob);
// bisects chronic_q so implied_event_positive_rate hits 1 / (1 + label_skew)
double calibrate_chronic_q(double base_rate, double signal_strength, double label_skew,
                           double esrd_prob, double risky_county_frac);

// beneficiaries needed for approximately n_events labeled inpatient events
int64_t beneficiaries_for_events(int64_t n_events, const CohortConfig &config);

Cohort generate_cohort(const CohortConfig &config);

// Era-split claim files (<type>_<era>.csv), beneficiaries.csv, counties.csv,
// ground_truth.csv, and cohort_stats.csv under dir (created if needed).
void write_cohort(const std::string &dir, const Cohort &cohort);

// load the claim/beneficiary/county files written by write_cohort (or any
// compatible directory), consolidating old-layout files to the current schema
struct LoadedCohort {
    std::vector<Beneficiary> beneficiaries;
    std::vector<CountyStats> counties;
    std::vector<ClaimRecord> claims;
};
LoadedCohort load_cohort_dir(const std::string &dir);

} // namespace readmit
