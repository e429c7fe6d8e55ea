#include "readmit/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "readmit/errors.hpp"
#include "readmit/rng.hpp"
#include "readmit/csv.hpp"

namespace readmit {

const char *special_token_string(int32_t id) {
    static const char *names[] = {"[PAD]", "[MASK]", "[UNK]", "[CLS]", "[SEP]"};
    return names[id];
}

int32_t gap_bucket(int days_before) {
    if (days_before <= 0) return 1;
    if (days_before <= 7) return 2;
    if (days_before <= 30) return 3;
    if (days_before <= 60) return 4;
    return 5;
}

std::string gap_token(int days_before) {
    switch (gap_bucket(days_before)) {
    case 1: return "GAP_0";
    case 2: return "GAP_1_7";
    case 3: return "GAP_8_30";
    case 4: return "GAP_31_60";
    default: return "GAP_61_90";
    }
}

const std::vector<IcdChapterRange> &icd_chapter_ranges() {
    // ICD-9-CM chapters by leading three digits; ships as data/icd9_chapters.csv
    static const std::vector<IcdChapterRange> ranges = {
        {1, 139, "ICD_CH_01"},   {140, 239, "ICD_CH_02"}, {240, 279, "ICD_CH_03"},
        {280, 289, "ICD_CH_04"}, {290, 319, "ICD_CH_05"}, {320, 389, "ICD_CH_06"},
        {390, 459, "ICD_CH_07"}, {460, 519, "ICD_CH_08"}, {520, 579, "ICD_CH_09"},
        {580, 629, "ICD_CH_10"}, {630, 679, "ICD_CH_11"}, {680, 709, "ICD_CH_12"},
        {710, 739, "ICD_CH_13"}, {740, 759, "ICD_CH_14"}, {760, 779, "ICD_CH_15"},
        {780, 799, "ICD_CH_16"}, {800, 999, "ICD_CH_17"},
    };
    return ranges;
}

namespace {

bool all_digits(const std::string &s, size_t from, size_t to) {
    if (from >= to || to > s.size()) return false;
    for (size_t i = from; i < to; ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

// "410", "410.0", "410.01" — leading category digits plus optional decimals
bool valid_decimal_tail(const std::string &s, size_t head_len, size_t max_frac) {
    if (s.size() == head_len) return true;
    if (s[head_len] != '.') return false;
    size_t frac = s.size() - head_len - 1;
    return frac >= 1 && frac <= max_frac && all_digits(s, head_len + 1, s.size());
}

} // namespace

std::string group_icd(const std::string &code) {
    if (code.size() >= 3 && all_digits(code, 0, 3) && valid_decimal_tail(code, 3, 2)) {
        int cat = std::stoi(code.substr(0, 3));
        for (const auto &r : icd_chapter_ranges())
            if (cat >= r.lo && cat <= r.hi) return r.token;
        return kUnkToken; // category 000
    }
    if (code.size() >= 3 && (code[0] == 'V' || code[0] == 'v') && all_digits(code, 1, 3) &&
        valid_decimal_tail(code, 3, 2))
        return "ICD_SUPP_V";
    if (code.size() >= 4 && (code[0] == 'E' || code[0] == 'e') && all_digits(code, 1, 4) &&
        valid_decimal_tail(code, 4, 1))
        return "ICD_SUPP_E";
    return kUnkToken;
}

std::string group_hcpcs(const std::string &code) {
    if (code.size() == 5 && all_digits(code, 0, 5)) {
        // CPT level I: coarse section buckets
        int n = std::stoi(code);
        struct Range { int lo, hi; const char *token; };
        static const Range sections[] = {
            {100, 1999, "HCPCS_ANES"},   {10021, 69990, "HCPCS_SURG"},
            {70010, 79999, "HCPCS_RAD"}, {80047, 89398, "HCPCS_PATH"},
            {90281, 99199, "HCPCS_MED"}, {99201, 99499, "HCPCS_EM"},
            {99500, 99607, "HCPCS_MED"},
        };
        for (const auto &s : sections)
            if (n >= s.lo && n <= s.hi) return s.token;
        return kUnkToken;
    }
    if (code.size() == 5 && code[0] >= 'A' && code[0] <= 'V' && all_digits(code, 1, 5))
        return std::string("HCPCS_") + code[0]; // level II letter category
    return kUnkToken;
}

VariableQuantizer fit_quantizer(std::vector<double> values, int bins) {
    if (bins < 2) throw InvalidConfig("quantizer bins must be >= 2");
    std::sort(values.begin(), values.end());
    size_t distinct = 0;
    for (size_t i = 0; i < values.size(); ++i)
        if (i == 0 || values[i] != values[i - 1]) ++distinct;
    if (distinct < static_cast<size_t>(bins))
        throw DegenerateVariable(std::to_string(distinct) + " distinct values < " +
                                 std::to_string(bins) + " bins");

    VariableQuantizer q;
    q.bins = bins;
    size_t n = values.size();
    for (int k = 1; k < bins; ++k) {
        // nearest-rank quantile: smallest value with at least ceil(p*n) values <= it
        size_t rank = (static_cast<size_t>(k) * n + bins - 1) / bins; // ceil(k*n/B)
        if (rank < 1) rank = 1;
        double edge = values[rank - 1];
        if (q.edges.empty() || edge > q.edges.back()) q.edges.push_back(edge);
    }
    return q;
}

void QuantizerSpec::add(const std::string &name, std::vector<double> values, int bins) {
    try {
        variables[name] = fit_quantizer(std::move(values), bins);
    } catch (const DegenerateVariable &) {
        VariableQuantizer q;
        q.bins = bins;
        q.degenerate = true;
        variables[name] = q;
    }
}

std::string quantize(const std::string &variable, double value, const QuantizerSpec &spec) {
    auto it = spec.variables.find(variable);
    if (it == spec.variables.end()) throw UnknownVariable(variable);
    const VariableQuantizer &q = it->second;
    if (q.degenerate) return variable + "_Q0";
    // right-open bins: bin index = number of edges <= value
    auto ub = std::upper_bound(q.edges.begin(), q.edges.end(), value);
    return variable + "_Q" + std::to_string(ub - q.edges.begin());
}

namespace {
std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}
} // namespace

void write_quantizer_file(const std::string &path, const QuantizerSpec &spec) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact(path + " (cannot open for writing)");
    out << "variable,bins,degenerate,edges\n";
    for (const auto &[name, q] : spec.variables) {
        std::vector<std::string> parts;
        for (double e : q.edges) parts.push_back(format_double(e));
        out << name << ',' << q.bins << ',' << (q.degenerate ? 1 : 0) << ',' << join(parts, '|')
            << "\n";
    }
}

QuantizerSpec read_quantizer_file(const std::string &path) {
    CsvTable csv = read_csv(path);
    QuantizerSpec spec;
    for (const auto &row : csv.rows) {
        VariableQuantizer q;
        q.bins = std::stoi(row.at(1));
        q.degenerate = row.at(2) == "1";
        if (!row.at(3).empty())
            for (const auto &part : split(row.at(3), '|')) q.edges.push_back(std::stod(part));
        spec.variables[row.at(0)] = std::move(q);
    }
    return spec;
}

Vocabulary build_vocabulary(const std::vector<std::string> &corpus, size_t cap, int min_count) {
    if (corpus.empty()) throw EmptyCorpus("no tokens from training cohort");

    std::unordered_map<std::string, int64_t> freq;
    for (const auto &t : corpus) ++freq[t];

    std::vector<std::pair<std::string, int64_t>> kept;
    for (auto &[token, count] : freq) {
        bool special = false;
        for (int32_t s = 0; s < kNumSpecials; ++s)
            if (token == special_token_string(s)) special = true;
        if (!special && count >= min_count) kept.emplace_back(token, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto &a, const auto &b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (cap < kNumSpecials) throw InvalidConfig("vocab cap below special count");
    if (kept.size() > cap - kNumSpecials) kept.resize(cap - kNumSpecials);

    Vocabulary v;
    for (int32_t s = 0; s < kNumSpecials; ++s) v.id_to_token.push_back(special_token_string(s));
    for (auto &[token, count] : kept) v.id_to_token.push_back(token);
    for (size_t i = 0; i < v.id_to_token.size(); ++i)
        v.token_to_id[v.id_to_token[i]] = static_cast<int32_t>(i);

    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < v.id_to_token.size(); ++i)
        h = fnv1a64(v.id_to_token[i] + "\t" + std::to_string(i) + "\n", h);
    v.content_hash = h;
    return v;
}

void write_vocab_file(const std::string &path, const Vocabulary &vocab) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact(path + " (cannot open for writing)");
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(vocab.content_hash));
    out << "# vocab_hash " << hex << "\n";
    for (size_t i = 0; i < vocab.id_to_token.size(); ++i) out << vocab.id_to_token[i] << '\t' << i << "\n";
}

Vocabulary read_vocab_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path);
    Vocabulary v;
    std::string line;
    uint64_t stated_hash = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# vocab_hash ", 0) == 0) {
            stated_hash = std::stoull(line.substr(13), nullptr, 16);
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(path + ": bad vocab line '" + line + "'");
        std::string token = line.substr(0, tab);
        size_t id = std::stoul(line.substr(tab + 1));
        if (id != v.id_to_token.size()) throw Error(path + ": non-contiguous vocab ids");
        v.id_to_token.push_back(token);
        v.token_to_id[token] = static_cast<int32_t>(id);
    }
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < v.id_to_token.size(); ++i)
        h = fnv1a64(v.id_to_token[i] + "\t" + std::to_string(i) + "\n", h);
    v.content_hash = h;
    if (stated_hash && stated_hash != h)
        throw VocabHashMismatch(path + ": stored hash does not match contents");
    return v;
}

std::string token_variable(const std::string &token) {
    if (!token.empty() && token.front() == '[') return "special";
    static const std::vector<std::pair<const char *, const char *>> prefixes = {
        {"ICD_", "diagnosis"},        {"HCPCS_", "procedure"},
        {"TYPE_", "claim_type"},      {"DSTATUS_", "discharge_status"},
        {"SPEC_", "provider_specialty"}, {"TOS_", "type_of_service"},
        {"POS_", "place_of_service"}, {"GAP_", "time_gap"},
        {"GENDER_", "gender"},        {"RACE_", "race"},
        {"ENT_", "entitlement_reason"},
    };
    for (const auto &[prefix, family] : prefixes)
        if (token.rfind(prefix, 0) == 0) return family;
    // quantized numerics: strip a _Qk or _NA suffix
    auto pos = token.rfind("_Q");
    if (pos != std::string::npos && all_digits(token, pos + 2, token.size()))
        return token.substr(0, pos);
    if (token.size() > 3 && token.compare(token.size() - 3, 3, "_NA") == 0)
        return token.substr(0, token.size() - 3);
    return token;
}

std::vector<std::string> claim_token_strings(const ClaimRecord &claim, const QuantizerSpec &spec) {
    std::vector<std::string> out;
    out.push_back(std::string("TYPE_") + to_string(claim.claim_type));
    if (claim.discharge_status != DischargeStatus::none)
        out.push_back(std::string("DSTATUS_") + to_string(claim.discharge_status));
    if (claim.has_admission() && claim.has_discharge())
        out.push_back(quantize("los_days", claim.discharge_date - claim.admission_date, spec));
    out.push_back(quantize("payment_amount", claim.payment_amount, spec));
    if (!claim.provider_specialty.empty()) out.push_back("SPEC_" + claim.provider_specialty);
    if (!claim.type_of_service.empty()) out.push_back("TOS_" + claim.type_of_service);
    if (!claim.place_of_service.empty()) out.push_back("POS_" + claim.place_of_service);
    for (const auto &code : claim.diagnosis_codes) out.push_back(group_icd(code));
    for (const auto &code : claim.procedure_codes) out.push_back(group_hcpcs(code));
    return out;
}

std::vector<std::string> personal_token_strings(const Beneficiary &b, Day index_admission,
                                                const QuantizerSpec &spec) {
    std::vector<std::string> out;
    out.push_back("GENDER_" + b.gender);
    out.push_back("RACE_" + b.race);
    out.push_back("ENT_" + b.entitlement_reason);
    double age_years = std::floor((index_admission - b.date_of_birth) / 365.25);
    out.push_back(quantize("age_years", age_years, spec));
    return out;
}

std::vector<std::string> county_token_strings(const CountyStats &county, const QuantizerSpec &spec) {
    std::vector<std::string> out;
    if (!county.known) {
        out = {"obesity_rate_NA", "smoking_rate_NA", "median_income_NA"};
        return out;
    }
    out.push_back(quantize("obesity_rate", county.obesity_rate, spec));
    out.push_back(quantize("smoking_rate", county.smoking_rate, spec));
    out.push_back(quantize("median_income", county.median_income, spec));
    return out;
}

AssembledStrings assemble_strings(const LabeledInpatientEvent &event,
                                  const BeneficiaryTimeline &timeline, const CountyStats &county,
                                  const QuantizerSpec &spec, int l_max) {
    size_t index_pos = timeline.claims.size();
    for (size_t i = 0; i < timeline.claims.size(); ++i)
        if (timeline.claims[i].claim_id == event.index_claim_id &&
            timeline.claims[i].claim_type == ClaimType::INP) {
            index_pos = i;
            break;
        }
    if (index_pos == timeline.claims.size())
        throw EventNotInTimeline(event.index_claim_id + " for beneficiary " +
                                 timeline.beneficiary.beneficiary_id);
    const ClaimRecord &index_claim = timeline.claims[index_pos];

    auto personal = personal_token_strings(timeline.beneficiary, index_claim.admission_date, spec);
    auto county_tokens = county_token_strings(county, spec);
    auto index_tokens = claim_token_strings(index_claim, spec);

    // history: claims strictly before the index claim in timeline order,
    // within the 90-day window; nothing dated after the index admission can
    // enter because the timeline is sorted by event date
    struct HistoryGroup {
        std::vector<std::string> tokens;
        int32_t bucket;
    };
    std::vector<HistoryGroup> history;
    for (size_t i = 0; i < index_pos; ++i) {
        const ClaimRecord &claim = timeline.claims[i];
        int days_before = index_claim.admission_date - claim.event_date();
        if (days_before < 0 || days_before > kHistoryWindowDays) continue;
        HistoryGroup g;
        g.bucket = gap_bucket(days_before);
        g.tokens.push_back(gap_token(days_before));
        for (auto &t : claim_token_strings(claim, spec)) g.tokens.push_back(std::move(t));
        history.push_back(std::move(g));
    }

    // drop oldest history claims first when over length
    size_t fixed = 1 + personal.size() + 1 + county_tokens.size() + 1 + index_tokens.size();
    auto total_len = [&](size_t first_group) {
        size_t n = fixed;
        bool any = first_group < history.size();
        for (size_t g = first_group; g < history.size(); ++g) n += history[g].tokens.size();
        if (any) n += 1; // closing SEP of the history segment
        return n;
    };
    size_t first_group = 0;
    while (first_group < history.size() && total_len(first_group) > static_cast<size_t>(l_max))
        ++first_group;

    AssembledStrings out;
    auto push = [&](const std::string &token, Segment seg, int32_t bucket) {
        out.tokens.push_back(token);
        out.segment_ids.push_back(static_cast<int32_t>(seg));
        out.time_bucket_ids.push_back(bucket);
    };
    push(special_token_string(kClsId), Segment::PERSONAL, 0);
    for (const auto &t : personal) push(t, Segment::PERSONAL, 0);
    push(special_token_string(kSepId), Segment::PERSONAL, 0);
    for (const auto &t : county_tokens) push(t, Segment::COUNTY, 0);
    push(special_token_string(kSepId), Segment::COUNTY, 0);
    if (first_group < history.size()) {
        for (size_t g = first_group; g < history.size(); ++g)
            for (const auto &t : history[g].tokens) push(t, Segment::HISTORY, history[g].bucket);
        push(special_token_string(kSepId), Segment::HISTORY, 0);
    }
    for (const auto &t : index_tokens) push(t, Segment::INDEX, 0);

    if (out.tokens.size() > static_cast<size_t>(l_max)) {
        // pathological single claims; keep the front, CLS always survives
        out.tokens.resize(l_max);
        out.segment_ids.resize(l_max);
        out.time_bucket_ids.resize(l_max);
    }
    return out;
}

LabeledSample assemble_sequence(const LabeledInpatientEvent &event,
                                const BeneficiaryTimeline &timeline, const CountyStats &county,
                                const Vocabulary &vocab, const QuantizerSpec &spec, int l_max) {
    AssembledStrings strings = assemble_strings(event, timeline, county, spec, l_max);
    LabeledSample s;
    s.tokens.reserve(strings.tokens.size());
    for (const auto &t : strings.tokens) s.tokens.push_back(vocab.id(t));
    s.segment_ids = std::move(strings.segment_ids);
    s.time_bucket_ids = std::move(strings.time_bucket_ids);
    s.label = event.label;
    s.beneficiary_id = timeline.beneficiary.beneficiary_id;
    s.race = timeline.beneficiary.race;
    s.gender = timeline.beneficiary.gender;
    s.index_claim_id = event.index_claim_id;
    return s;
}

namespace {
std::string join_ids(const std::vector<int32_t> &ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += std::to_string(ids[i]);
    }
    return out;
}

std::vector<int32_t> split_ids(const std::string &text) {
    std::vector<int32_t> out;
    std::istringstream in(text);
    int32_t v;
    while (in >> v) out.push_back(v);
    return out;
}
} // namespace

void write_samples_file(const std::string &path, const std::vector<LabeledSample> &samples) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact(path + " (cannot open for writing)");
    for (const auto &s : samples)
        out << join_ids(s.tokens) << ',' << join_ids(s.segment_ids) << ','
            << join_ids(s.time_bucket_ids) << ',' << s.label << ',' << s.beneficiary_id << ','
            << s.race << ',' << s.gender << ',' << s.index_claim_id << "\n";
}

std::vector<LabeledSample> read_samples_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path);
    std::vector<LabeledSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != 8) throw Error(path + ": bad sample line");
        LabeledSample s;
        s.tokens = split_ids(fields[0]);
        s.segment_ids = split_ids(fields[1]);
        s.time_bucket_ids = split_ids(fields[2]);
        s.label = std::stoi(fields[3]);
        s.beneficiary_id = fields[4];
        s.race = fields[5];
        s.gender = fields[6];
        s.index_claim_id = fields[7];
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<LabeledSample> mask_demographic_tokens(std::vector<LabeledSample> samples,
                                                   const Vocabulary &vocab) {
    std::vector<char> is_demo(vocab.size(), 0);
    for (size_t id = 0; id < vocab.size(); ++id) {
        const std::string family = token_variable(vocab.token(static_cast<int32_t>(id)));
        is_demo[id] = (family == "race" || family == "gender") ? 1 : 0;
    }
    for (auto &s : samples)
        for (auto &t : s.tokens)
            if (t >= 0 && static_cast<size_t>(t) < is_demo.size() && is_demo[t]) t = kUnkId;
    return samples;
}

size_t raw_variable_value_count(const std::vector<BeneficiaryTimeline> &timelines,
                                const std::vector<CountyStats> &counties) {
    std::set<std::string> raw;
    for (const auto &t : timelines) {
        raw.insert("gender=" + t.beneficiary.gender);
        raw.insert("race=" + t.beneficiary.race);
        raw.insert("entitlement_reason=" + t.beneficiary.entitlement_reason);
        raw.insert("date_of_birth=" + format_iso_date(t.beneficiary.date_of_birth));
        for (const auto &c : t.claims) {
            raw.insert(std::string("claim_type=") + to_string(c.claim_type));
            for (const auto &code : c.diagnosis_codes) raw.insert("diagnosis_code=" + code);
            for (const auto &code : c.procedure_codes) raw.insert("procedure_code=" + code);
            if (c.discharge_status != DischargeStatus::none)
                raw.insert(std::string("discharge_status=") + to_string(c.discharge_status));
            if (!c.provider_specialty.empty()) raw.insert("provider_specialty=" + c.provider_specialty);
            if (!c.type_of_service.empty()) raw.insert("type_of_service=" + c.type_of_service);
            if (!c.place_of_service.empty()) raw.insert("place_of_service=" + c.place_of_service);
            raw.insert("payment_amount=" + format_double(c.payment_amount));
            if (c.has_admission() && c.has_discharge())
                raw.insert("los_days=" + std::to_string(c.discharge_date - c.admission_date));
        }
    }
    for (const auto &c : counties) {
        raw.insert("obesity_rate=" + format_double(c.obesity_rate));
        raw.insert("smoking_rate=" + format_double(c.smoking_rate));
        raw.insert("median_income=" + format_double(c.median_income));
    }
    return raw.size();
}

} // namespace readmit
