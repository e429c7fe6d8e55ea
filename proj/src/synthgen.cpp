#include "readmit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "readmit/csv.hpp"
#include "readmit/errors.hpp"
#include "readmit/rng.hpp"
#include "readmit/vocab.hpp"

namespace readmit {

namespace {

constexpr uint64_t kUniverseSeed = 0xC0DEULL;
constexpr uint64_t kDriftSeed = 0xD21F7ULL;
constexpr int kVChapter = 18;
constexpr int kEChapter = 19;
constexpr int kCodesPerChapter = 24;
constexpr int kSupplementaryCodes = 12;

std::string icd_string(int category, int decimal) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d.%d", category, decimal);
    return buf;
}

bool is_risky_chapter(int chapter) {
    for (int c : kRiskyChapters)
        if (c == chapter) return true;
    return false;
}

} // namespace

const CodeUniverse &code_universe() {
    static const CodeUniverse universe = [] {
        CodeUniverse u;
        u.by_chapter.resize(kEChapter + 1);
        Rng rng(kUniverseSeed);

        const auto &chapters = icd_chapter_ranges();
        for (size_t ch = 0; ch < chapters.size(); ++ch) {
            std::set<std::string> codes;
            Rng chapter_rng = rng.derive(ch + 1);
            while (codes.size() < kCodesPerChapter) {
                int cat = static_cast<int>(chapter_rng.range(chapters[ch].lo, chapters[ch].hi));
                codes.insert(icd_string(cat, static_cast<int>(chapter_rng.range(0, 9))));
            }
            for (const auto &c : codes) {
                u.icd_codes.push_back(c);
                u.chapter_of[c] = static_cast<int>(ch + 1);
                u.by_chapter[ch + 1].push_back(c);
            }
        }
        {
            std::set<std::string> codes;
            Rng v_rng = rng.derive("supplementary_v");
            while (codes.size() < kSupplementaryCodes) {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "V%02d.%d", static_cast<int>(v_rng.range(1, 89)),
                              static_cast<int>(v_rng.range(0, 9)));
                codes.insert(buf);
            }
            for (const auto &c : codes) {
                u.icd_codes.push_back(c);
                u.chapter_of[c] = kVChapter;
                u.by_chapter[kVChapter].push_back(c);
            }
        }
        {
            std::set<std::string> codes;
            Rng e_rng = rng.derive("supplementary_e");
            while (codes.size() < kSupplementaryCodes) {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "E%03d.%d", static_cast<int>(e_rng.range(800, 999)),
                              static_cast<int>(e_rng.range(0, 9)));
                codes.insert(buf);
            }
            for (const auto &c : codes) {
                u.icd_codes.push_back(c);
                u.chapter_of[c] = kEChapter;
                u.by_chapter[kEChapter].push_back(c);
            }
        }

        struct Section { int lo, hi, count; };
        static const Section sections[] = {
            {100, 1999, 40},   {10021, 69990, 60}, {70010, 79999, 40}, {80047, 89398, 40},
            {90281, 99199, 40}, {99201, 99499, 20}, {99500, 99607, 10},
        };
        std::set<std::string> hcpcs;
        Rng h_rng = rng.derive("hcpcs");
        for (const auto &s : sections) {
            size_t want = hcpcs.size() + s.count;
            while (hcpcs.size() < want) {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%05d", static_cast<int>(h_rng.range(s.lo, s.hi)));
                hcpcs.insert(buf);
            }
        }
        static const char kLevel2Letters[] = {'A', 'E', 'G', 'J', 'K', 'L'};
        for (char letter : kLevel2Letters) {
            size_t want = hcpcs.size() + 6;
            while (hcpcs.size() < want) {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%c%04d", letter,
                              static_cast<int>(h_rng.range(0, 9999)));
                hcpcs.insert(buf);
            }
        }
        u.hcpcs_codes.assign(hcpcs.begin(), hcpcs.end());
        return u;
    }();
    return universe;
}

std::unordered_map<std::string, std::string> build_drift_remap(double shift_strength) {
    std::unordered_map<std::string, std::string> remap;
    if (shift_strength <= 0) return remap;
    if (shift_strength > 1) throw InvalidConfig("shift_strength must be in [0, 1]");

    const CodeUniverse &u = code_universe();
    std::vector<std::string> order = u.icd_codes;
    Rng rng(kDriftSeed);
    rng.shuffle(order);

    // a fixed shuffle makes remap sets nested across shift strengths
    size_t n = static_cast<size_t>(shift_strength * static_cast<double>(u.icd_codes.size()));
    for (size_t i = 0; i < n && i < order.size(); ++i) {
        const std::string &source = order[i];
        int source_chapter = u.chapter_of.at(source);
        std::string target;
        do {
            target = u.icd_codes[rng.below(u.icd_codes.size())];
        } while (u.chapter_of.at(target) == source_chapter);
        remap[source] = target;
    }
    return remap;
}

// --- closed-form calibration ------------------------------------------------

double chain_hazard(double base_rate, double signal_strength, int risk_score) {
    double logit = std::log(base_rate / (1.0 - base_rate)) + signal_strength * risk_score;
    return 1.0 / (1.0 + std::exp(-logit));
}

double expected_chain_stays(double hazard, int cap) {
    if (hazard <= 0.0) return 1.0;
    return (1.0 - std::pow(hazard, cap)) / (1.0 - hazard);
}

std::vector<double> risk_distribution(double chronic_q, double esrd_prob,
                                      double risky_county_frac) {
    // Binomial(kNumRiskyChapters, q) convolved with two independent Bernoullis
    std::vector<double> dist(kNumRiskyChapters + 1, 0.0);
    for (int k = 0; k <= kNumRiskyChapters; ++k) {
        double c = 1.0;
        for (int i = 0; i < k; ++i) c = c * (kNumRiskyChapters - i) / (i + 1);
        dist[k] = c * std::pow(chronic_q, k) * std::pow(1.0 - chronic_q, kNumRiskyChapters - k);
    }
    for (double p : {esrd_prob, risky_county_frac}) {
        std::vector<double> next(dist.size() + 1, 0.0);
        for (size_t k = 0; k < dist.size(); ++k) {
            next[k] += dist[k] * (1.0 - p);
            next[k + 1] += dist[k] * p;
        }
        dist = std::move(next);
    }
    return dist;
}

double implied_event_positive_rate(const std::vector<double> &risk_dist, double base_rate,
                                   double signal_strength, int cap, double extra_stay_prob) {
    double mean_stays = 0.0;
    for (size_t k = 0; k < risk_dist.size(); ++k)
        mean_stays += risk_dist[k] *
                      expected_chain_stays(chain_hazard(base_rate, signal_strength, static_cast<int>(k)), cap);
    return (mean_stays - 1.0) / (mean_stays + extra_stay_prob);
}

double analytic_bayes_auc(const std::vector<double> &risk_dist, double base_rate,
                          double signal_strength, int cap, double extra_stay_prob) {
    std::vector<double> pos(risk_dist.size()), neg(risk_dist.size());
    for (size_t k = 0; k < risk_dist.size(); ++k) {
        double stays =
            expected_chain_stays(chain_hazard(base_rate, signal_strength, static_cast<int>(k)), cap);
        pos[k] = risk_dist[k] * (stays - 1.0);
        neg[k] = risk_dist[k] * (1.0 + extra_stay_prob);
    }
    double total_pos = 0.0, total_neg = 0.0;
    for (size_t k = 0; k < risk_dist.size(); ++k) {
        total_pos += pos[k];
        total_neg += neg[k];
    }
    if (total_pos <= 0.0 || total_neg <= 0.0)
        throw SingleClassInput("risk mixture produces a single label class");
    double wins = 0.0;
    for (size_t kp = 0; kp < pos.size(); ++kp)
        for (size_t kn = 0; kn < neg.size(); ++kn) {
            if (kp > kn) wins += pos[kp] * neg[kn];
            else if (kp == kn) wins += 0.5 * pos[kp] * neg[kn];
        }
    return wins / (total_pos * total_neg);
}

double calibrate_chronic_q(double base_rate, double signal_strength, double label_skew,
                           double esrd_prob, double risky_county_frac) {
    if (label_skew <= 0) throw InvalidConfig("label_skew must be positive");
    double target = 1.0 / (1.0 + label_skew);
    auto rate_at = [&](double q) {
        return implied_event_positive_rate(risk_distribution(q, esrd_prob, risky_county_frac),
                                           base_rate, signal_strength, kChainCap, kExtraStayProb);
    };
    double lo = 0.0, hi = 1.0;
    if (rate_at(lo) > target || rate_at(hi) < target)
        throw InvalidConfig("label_skew " + std::to_string(label_skew) +
                            " unreachable at base rate " + std::to_string(base_rate) +
                            " and signal strength " + std::to_string(signal_strength));
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (rate_at(mid) < target) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

int64_t beneficiaries_for_events(int64_t n_events, const CohortConfig &config) {
    // planning estimate: expected risky-county fraction under the county model
    double expected_risky = (0.45 - kObesityRiskThreshold) / 0.25;
    double q = calibrate_chronic_q(config.base_readmission_rate, config.signal_strength,
                                   config.label_skew, kEsrdProb, expected_risky);
    auto dist = risk_distribution(q, kEsrdProb, expected_risky);
    double mean_stays = 0.0;
    for (size_t k = 0; k < dist.size(); ++k)
        mean_stays += dist[k] * expected_chain_stays(chain_hazard(config.base_readmission_rate,
                                                                  config.signal_strength,
                                                                  static_cast<int>(k)),
                                                     kChainCap);
    double events_per_bene = mean_stays + kExtraStayProb;
    return static_cast<int64_t>(std::ceil(static_cast<double>(n_events) / events_per_bene));
}

// --- cohort generation -------------------------------------------------------

namespace {

std::string zero_pad(int64_t value, int width, char prefix = 0) {
    char buf[32];
    if (prefix)
        std::snprintf(buf, sizeof(buf), "%c%0*lld", prefix, width, static_cast<long long>(value));
    else
        std::snprintf(buf, sizeof(buf), "%0*lld", width, static_cast<long long>(value));
    return buf;
}

double round_cents(double v) { return std::round(v * 100.0) / 100.0; }

const std::vector<std::string> &specialty_pool() {
    static const std::vector<std::string> pool = {"01", "06", "08", "11", "13", "20", "33", "50"};
    return pool;
}
const std::vector<std::string> &tos_pool() {
    static const std::vector<std::string> pool = {"1", "2", "3", "9"};
    return pool;
}
const std::vector<std::string> &pos_pool() {
    static const std::vector<std::string> pool = {"11", "12", "21", "22", "23", "31"};
    return pool;
}

struct ClaimFactory {
    const CohortConfig &config;
    const std::unordered_map<std::string, std::string> &remap;
    int64_t next_claim_id = 1;

    std::string emit_code(const std::string &code) const {
        auto it = remap.find(code);
        return it == remap.end() ? code : it->second;
    }

    ClaimRecord base_claim(const Beneficiary &bene, const CountyStats &county, ClaimType type) {
        ClaimRecord c;
        c.claim_id = zero_pad(next_claim_id++, 9, 'C');
        c.beneficiary_id = bene.beneficiary_id;
        c.claim_type = type;
        c.county_id = county.county_id;
        c.state_id = county.state_id;
        return c;
    }
};

// draws 1-2 codes outside the risky chapters (fillers carry no signal)
std::string filler_code(Rng &rng) {
    const CodeUniverse &u = code_universe();
    static const std::vector<int> filler_chapters = [] {
        std::vector<int> out;
        for (int ch = 1; ch <= kEChapter; ++ch)
            if (!is_risky_chapter(ch)) out.push_back(ch);
        return out;
    }();
    int ch = filler_chapters[rng.below(filler_chapters.size())];
    return u.by_chapter[ch][rng.below(u.by_chapter[ch].size())];
}

std::string chapter_code(Rng &rng, int chapter) {
    const auto &codes = code_universe().by_chapter[chapter];
    return codes[rng.below(codes.size())];
}

DischargeStatus final_stay_status(Rng &rng) {
    double u = rng.uniform();
    if (u < 0.80) return DischargeStatus::home;
    if (u < 0.95) return DischargeStatus::other;
    return DischargeStatus::expired;
}

} // namespace

Cohort generate_cohort(const CohortConfig &config) {
    if (config.n_beneficiaries < 1) throw InvalidConfig("n_beneficiaries must be positive");
    Day start = parse_iso_date(config.start_date, "cohort start_date");
    Day end = parse_iso_date(config.end_date, "cohort end_date");
    parse_iso_date(config.era_cutoff, "cohort era_cutoff");
    if (end - start < kChainWarmupDays + kChainSpanBudgetDays)
        throw InvalidConfig("date range must span at least " +
                            std::to_string(kChainWarmupDays + kChainSpanBudgetDays) + " days");
    if (config.base_readmission_rate <= 0 || config.base_readmission_rate >= 1)
        throw InvalidConfig("base_readmission_rate must be in (0, 1)");

    Cohort cohort;
    cohort.config = config;
    Rng root(config.seed);
    auto remap = build_drift_remap(config.shift_strength);
    ClaimFactory factory{config, remap};

    // counties ---------------------------------------------------------------
    int64_t n_counties = std::clamp<int64_t>(config.n_beneficiaries / 20, 10, 400);
    Rng county_rng = root.derive("counties");
    for (int64_t i = 0; i < n_counties; ++i) {
        CountyStats c;
        c.county_id = zero_pad(i + 1, 3);
        c.state_id = zero_pad(county_rng.range(1, 50), 2);
        c.obesity_rate = std::round(county_rng.uniform(0.20, 0.45) * 1000.0) / 1000.0;
        c.smoking_rate = std::round(county_rng.uniform(0.10, 0.35) * 1000.0) / 1000.0;
        c.median_income = std::round(county_rng.uniform(30000.0, 80000.0));
        cohort.counties.push_back(c);
    }

    // beneficiaries and their risk inputs -------------------------------------
    Day dob_lo = parse_iso_date("1925-01-01", "dob range");
    Day dob_hi = parse_iso_date("1942-12-31", "dob range");
    Rng bene_rng = root.derive("beneficiaries");
    std::vector<size_t> county_index(config.n_beneficiaries);
    int64_t esrd_count = 0, risky_county_count = 0;
    for (int64_t i = 0; i < config.n_beneficiaries; ++i) {
        Beneficiary b;
        b.beneficiary_id = zero_pad(i + 1, 7, 'B');
        b.date_of_birth = static_cast<Day>(bene_rng.range(dob_lo, dob_hi));
        b.gender = bene_rng.bernoulli(0.5) ? "M" : "F";
        double race_u = bene_rng.uniform();
        b.race = race_u < 0.80 ? "white" : race_u < 0.90 ? "black" : race_u < 0.95 ? "hispanic" : "other";
        double ent_u = bene_rng.uniform();
        b.entitlement_reason = ent_u < kEsrdProb ? "esrd" : ent_u < 0.2 ? "disability" : "old_age";
        if (b.entitlement_reason == "esrd") ++esrd_count;
        county_index[i] = county_rng.below(cohort.counties.size());
        if (cohort.counties[county_index[i]].obesity_rate > kObesityRiskThreshold)
            ++risky_county_count;
        cohort.beneficiaries.push_back(std::move(b));
    }

    // calibrate the chronic-chapter probability against the realized cohort
    double esrd_frac = static_cast<double>(esrd_count) / config.n_beneficiaries;
    double risky_frac = static_cast<double>(risky_county_count) / config.n_beneficiaries;
    double q = calibrate_chronic_q(config.base_readmission_rate, config.signal_strength,
                                   config.label_skew, esrd_frac, risky_frac);
    auto dist = risk_distribution(q, esrd_frac, risky_frac);
    cohort.stats.chronic_q = q;
    cohort.stats.expected_stays = 0.0;
    for (size_t k = 0; k < dist.size(); ++k)
        cohort.stats.expected_stays +=
            dist[k] * expected_chain_stays(chain_hazard(config.base_readmission_rate,
                                                        config.signal_strength, static_cast<int>(k)),
                                           kChainCap);
    cohort.stats.implied_positive_rate = implied_event_positive_rate(
        dist, config.base_readmission_rate, config.signal_strength, kChainCap, kExtraStayProb);
    cohort.stats.analytic_bayes_auc = analytic_bayes_auc(
        dist, config.base_readmission_rate, config.signal_strength, kChainCap, kExtraStayProb);
    cohort.stats.expected_events_per_beneficiary = cohort.stats.expected_stays + kExtraStayProb;

    // claims per beneficiary ---------------------------------------------------
    Rng claim_root = root.derive("claims");
    Day chain_lo = start + kChainWarmupDays;
    Day chain_hi = end - kChainSpanBudgetDays;
    for (int64_t i = 0; i < config.n_beneficiaries; ++i) {
        const Beneficiary &bene = cohort.beneficiaries[i];
        const CountyStats &county = cohort.counties[county_index[i]];
        Rng rng = claim_root.derive(fnv1a64(bene.beneficiary_id));

        GroundTruth truth;
        for (int ch : kRiskyChapters)
            if (rng.bernoulli(q)) truth.chronic_chapters.push_back(ch);
        truth.esrd = bene.entitlement_reason == "esrd";
        truth.risky_county = county.obesity_rate > kObesityRiskThreshold;
        truth.risk_score = static_cast<int>(truth.chronic_chapters.size()) +
                           (truth.esrd ? 1 : 0) + (truth.risky_county ? 1 : 0);
        truth.hazard =
            chain_hazard(config.base_readmission_rate, config.signal_strength, truth.risk_score);

        // readmission chain
        struct Stay { Day admission, discharge; DischargeStatus status; };
        std::vector<Stay> stays;
        Day admission = static_cast<Day>(rng.range(chain_lo, chain_hi));
        while (true) {
            Stay s;
            s.admission = admission;
            s.discharge = admission + static_cast<Day>(rng.range(3, 7));
            s.status = DischargeStatus::none; // decided once the successor is known
            stays.push_back(s);
            if (stays.size() >= kChainCap || !rng.bernoulli(truth.hazard)) break;
            if (rng.bernoulli(kTransferProb)) {
                stays.back().status = DischargeStatus::transfer;
                admission = stays.back().discharge;
            } else {
                stays.back().status =
                    rng.bernoulli(0.75) ? DischargeStatus::home : DischargeStatus::other;
                admission = stays.back().discharge + static_cast<Day>(rng.range(1, 30));
            }
        }
        if (rng.bernoulli(kExtraStayProb)) {
            // a lone follow-up admission well outside the window; the stay it
            // follows cannot have ended in death
            stays.back().status = rng.bernoulli(0.8) ? DischargeStatus::home : DischargeStatus::other;
            Stay s;
            s.admission = stays.back().discharge + static_cast<Day>(rng.range(31, 240));
            s.discharge = s.admission + static_cast<Day>(rng.range(3, 7));
            s.status = final_stay_status(rng);
            stays.push_back(s);
        } else {
            stays.back().status = final_stay_status(rng);
        }

        for (const Stay &stay : stays) {
            ClaimRecord c = factory.base_claim(bene, county, ClaimType::INP);
            c.admission_date = stay.admission;
            c.discharge_date = stay.discharge;
            c.service_date = stay.admission;
            c.discharge_status = stay.status;
            for (int ch : truth.chronic_chapters)
                c.diagnosis_codes.push_back(factory.emit_code(chapter_code(rng, ch)));
            int fillers = static_cast<int>(rng.range(1, 2));
            for (int f = 0; f < fillers; ++f)
                c.diagnosis_codes.push_back(factory.emit_code(filler_code(rng)));
            int procs = static_cast<int>(rng.range(1, 3));
            for (int p = 0; p < procs; ++p)
                c.procedure_codes.push_back(rng.pick(code_universe().hcpcs_codes));
            c.provider_specialty = rng.pick(specialty_pool());
            c.type_of_service = rng.pick(tos_pool());
            c.place_of_service = "21";
            c.payment_amount = round_cents(rng.uniform(4000.0, 30000.0));
            cohort.claims.push_back(std::move(c));
        }

        // prodrome visits shortly before the chain (history-window material)
        int n_prodrome = static_cast<int>(rng.range(1, 2));
        for (int p = 0; p < n_prodrome; ++p) {
            ClaimRecord c = factory.base_claim(bene, county,
                                               rng.bernoulli(0.5) ? ClaimType::OUT : ClaimType::CAR);
            c.service_date = stays.front().admission - static_cast<Day>(rng.range(1, 60));
            if (!truth.chronic_chapters.empty() && rng.bernoulli(0.7))
                c.diagnosis_codes.push_back(
                    factory.emit_code(chapter_code(rng, rng.pick(truth.chronic_chapters))));
            else
                c.diagnosis_codes.push_back(factory.emit_code(filler_code(rng)));
            c.provider_specialty = rng.pick(specialty_pool());
            c.type_of_service = rng.pick(tos_pool());
            c.place_of_service = rng.pick(pos_pool());
            c.payment_amount = round_cents(rng.uniform(50.0, 500.0));
            cohort.claims.push_back(std::move(c));
        }

        // background utilization across the whole window
        int n_background = static_cast<int>(rng.range(2, 8));
        for (int b = 0; b < n_background; ++b) {
            static const std::vector<ClaimType> kinds = {ClaimType::OUT, ClaimType::CAR,
                                                         ClaimType::DME, ClaimType::HHA,
                                                         ClaimType::SNF, ClaimType::HOSP};
            static const std::vector<double> kind_weights = {0.35, 0.35, 0.10, 0.10, 0.05, 0.05};
            ClaimType kind = kinds[rng.pick_weighted(kind_weights)];
            ClaimRecord c = factory.base_claim(bene, county, kind);
            Day when = static_cast<Day>(rng.range(start, end - 95));
            c.service_date = when;
            if (kind == ClaimType::HHA || kind == ClaimType::SNF || kind == ClaimType::HOSP) {
                c.admission_date = when;
                c.discharge_date = when + static_cast<Day>(rng.range(5, 60));
                c.payment_amount = round_cents(rng.uniform(500.0, 8000.0));
            } else {
                c.payment_amount = round_cents(rng.uniform(20.0, 800.0));
            }
            int n_dx = static_cast<int>(rng.range(1, 2));
            for (int d = 0; d < n_dx; ++d) {
                if (!truth.chronic_chapters.empty() && rng.bernoulli(0.5))
                    c.diagnosis_codes.push_back(
                        factory.emit_code(chapter_code(rng, rng.pick(truth.chronic_chapters))));
                else
                    c.diagnosis_codes.push_back(factory.emit_code(filler_code(rng)));
            }
            if (rng.bernoulli(0.4)) c.procedure_codes.push_back(rng.pick(code_universe().hcpcs_codes));
            c.provider_specialty = rng.pick(specialty_pool());
            c.type_of_service = rng.pick(tos_pool());
            c.place_of_service = rng.pick(pos_pool());
            cohort.claims.push_back(std::move(c));
        }

        cohort.ground_truth[bene.beneficiary_id] = std::move(truth);
    }

    // claims before the cutoff arrive in the old file layout
    Day cutoff = parse_iso_date(config.era_cutoff, "cohort era_cutoff");
    for (auto &c : cohort.claims)
        c.schema_era = c.event_date() < cutoff ? SchemaEra::pre2011 : SchemaEra::v2011;
    return cohort;
}

namespace {
const std::vector<ClaimType> &all_claim_types() {
    static const std::vector<ClaimType> types = {ClaimType::DME, ClaimType::CAR,  ClaimType::HHA,
                                                 ClaimType::HOSP, ClaimType::INP, ClaimType::OUT,
                                                 ClaimType::SNF};
    return types;
}

std::string lower(std::string s) {
    for (char &c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}
} // namespace

void write_cohort(const std::string &dir, const Cohort &cohort) {
    std::filesystem::create_directories(dir);
    for (ClaimType type : all_claim_types()) {
        for (SchemaEra era : {SchemaEra::pre2011, SchemaEra::v2011}) {
            std::vector<ClaimRecord> rows;
            for (const auto &c : cohort.claims)
                if (c.claim_type == type && c.schema_era == era) rows.push_back(c);
            if (rows.empty()) continue;
            std::string path = dir + "/" + lower(to_string(type)) + "_" + to_string(era) + ".csv";
            write_claim_file(path, rows, era);
        }
    }
    write_beneficiary_file(dir + "/beneficiaries.csv", cohort.beneficiaries);
    write_county_file(dir + "/counties.csv", cohort.counties);

    {
        std::ofstream out(dir + "/ground_truth.csv");
        if (!out) throw MissingArtifact(dir + "/ground_truth.csv (cannot open for writing)");
        out << "beneficiary_id,risk_score,hazard,esrd,risky_county,chronic_chapters\n";
        for (const auto &b : cohort.beneficiaries) {
            const GroundTruth &t = cohort.ground_truth.at(b.beneficiary_id);
            std::vector<std::string> chapters;
            for (int ch : t.chronic_chapters) chapters.push_back(std::to_string(ch));
            char hazard[32];
            std::snprintf(hazard, sizeof(hazard), "%.10g", t.hazard);
            out << b.beneficiary_id << ',' << t.risk_score << ',' << hazard << ','
                << (t.esrd ? 1 : 0) << ',' << (t.risky_county ? 1 : 0) << ','
                << join(chapters, '|') << "\n";
        }
    }
    {
        std::ofstream out(dir + "/cohort_stats.csv");
        if (!out) throw MissingArtifact(dir + "/cohort_stats.csv (cannot open for writing)");
        out << "key,value\n";
        char buf[64];
        auto emit = [&](const char *key, double v) {
            std::snprintf(buf, sizeof(buf), "%.10g", v);
            out << key << ',' << buf << "\n";
        };
        out << "n_beneficiaries," << cohort.config.n_beneficiaries << "\n";
        out << "seed," << cohort.config.seed << "\n";
        emit("base_readmission_rate", cohort.config.base_readmission_rate);
        emit("signal_strength", cohort.config.signal_strength);
        emit("label_skew", cohort.config.label_skew);
        emit("shift_strength", cohort.config.shift_strength);
        emit("chronic_q", cohort.stats.chronic_q);
        emit("expected_stays", cohort.stats.expected_stays);
        emit("implied_positive_rate", cohort.stats.implied_positive_rate);
        emit("analytic_bayes_auc", cohort.stats.analytic_bayes_auc);
        emit("expected_events_per_beneficiary", cohort.stats.expected_events_per_beneficiary);
    }
}

LoadedCohort load_cohort_dir(const std::string &dir) {
    LoadedCohort loaded;
    if (!std::filesystem::exists(dir + "/beneficiaries.csv"))
        throw MissingArtifact(dir + "/beneficiaries.csv");
    loaded.beneficiaries = parse_beneficiary_file(dir + "/beneficiaries.csv");
    if (std::filesystem::exists(dir + "/counties.csv"))
        loaded.counties = parse_county_file(dir + "/counties.csv");

    bool any = false;
    for (ClaimType type : all_claim_types()) {
        for (SchemaEra era : {SchemaEra::pre2011, SchemaEra::v2011}) {
            std::string path = dir + "/" + lower(to_string(type)) + "_" + to_string(era) + ".csv";
            if (!std::filesystem::exists(path)) continue;
            any = true;
            auto rows = parse_claim_file(path, type, era);
            for (auto &r : rows) loaded.claims.push_back(std::move(r));
        }
    }
    if (!any) throw MissingArtifact(dir + ": no claim files (<type>_<era>.csv)");
    loaded.claims = consolidate_schema(std::move(loaded.claims));
    return loaded;
}

} // namespace readmit
