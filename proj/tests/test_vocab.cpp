#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "readmit/csv.hpp"
#include "readmit/errors.hpp"
#include "readmit/rng.hpp"
#include "readmit/vocab.hpp"

using namespace readmit;

namespace {
std::string temp_path(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / "readmit_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}
} // namespace

TEST_CASE("chapter table matches the shipped data file") {
    CsvTable csv = read_csv("data/icd9_chapters.csv");
    const auto &ranges = icd_chapter_ranges();
    REQUIRE(csv.rows.size() == ranges.size());
    for (size_t i = 0; i < ranges.size(); ++i) {
        CHECK(std::stoi(csv.rows[i][0]) == ranges[i].lo);
        CHECK(std::stoi(csv.rows[i][1]) == ranges[i].hi);
        CHECK(csv.rows[i][2] == ranges[i].token);
    }
}

TEST_CASE("diagnosis codes group to chapters") {
    CHECK(group_icd("410.1") == "ICD_CH_07");
    CHECK(group_icd("410") == "ICD_CH_07");
    CHECK(group_icd("042") == "ICD_CH_01");
    CHECK(group_icd("139.9") == "ICD_CH_01");
    CHECK(group_icd("140.0") == "ICD_CH_02");
    CHECK(group_icd("250.00") == "ICD_CH_03");
    CHECK(group_icd("585.9") == "ICD_CH_10");
    CHECK(group_icd("999.9") == "ICD_CH_17");
    CHECK(group_icd("V58.1") == "ICD_SUPP_V");
    CHECK(group_icd("E880.2") == "ICD_SUPP_E");
    // malformed codes degrade to the unknown token rather than throwing
    CHECK(group_icd("") == kUnkToken);
    CHECK(group_icd("41") == kUnkToken);
    CHECK(group_icd("abc") == kUnkToken);
    CHECK(group_icd("410.") == kUnkToken);
    CHECK(group_icd("410.123") == kUnkToken);
    CHECK(group_icd("000.1") == kUnkToken);
    CHECK(group_icd("E88") == kUnkToken);
}

TEST_CASE("procedure codes group to coarse families") {
    CHECK(group_hcpcs("00100") == "HCPCS_ANES");
    CHECK(group_hcpcs("33533") == "HCPCS_SURG");
    CHECK(group_hcpcs("70010") == "HCPCS_RAD");
    CHECK(group_hcpcs("80047") == "HCPCS_PATH");
    CHECK(group_hcpcs("90281") == "HCPCS_MED");
    CHECK(group_hcpcs("99213") == "HCPCS_EM");
    CHECK(group_hcpcs("99500") == "HCPCS_MED");
    CHECK(group_hcpcs("J1234") == "HCPCS_J");
    CHECK(group_hcpcs("A0428") == "HCPCS_A");
    CHECK(group_hcpcs("1234") == kUnkToken);
    CHECK(group_hcpcs("123456") == kUnkToken);
    CHECK(group_hcpcs("W1234") == kUnkToken);
    CHECK(group_hcpcs("09999") == kUnkToken); // gap between sections
}

TEST_CASE("decile edges on 1..100 sit at the multiples of ten") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(i);
    auto q = fit_quantizer(values, 10);
    REQUIRE(q.edges.size() == 9);
    for (int k = 1; k <= 9; ++k) CHECK(q.edges[k - 1] == doctest::Approx(10.0 * k));
}

TEST_CASE("values equal to an edge fall in the next bin") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(i);
    QuantizerSpec spec;
    spec.add("x", values, 10);
    CHECK(quantize("x", 9.99, spec) == "x_Q0");
    CHECK(quantize("x", 10.0, spec) == "x_Q1");
    CHECK(quantize("x", 50.0, spec) == "x_Q5"); // the median edge maps to Q5
    CHECK(quantize("x", 95.0, spec) == "x_Q9");
    CHECK(quantize("x", -100.0, spec) == "x_Q0");
    CHECK(quantize("x", 1e9, spec) == "x_Q9");
}

TEST_CASE("fitted edges satisfy the nearest-rank definition on random data") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        size_t n = static_cast<size_t>(rng.range(10, 400));
        std::vector<double> values;
        for (size_t i = 0; i < n; ++i)
            values.push_back(std::floor(rng.uniform(0, 50))); // plenty of ties
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        size_t distinct = 0;
        for (size_t i = 0; i < sorted.size(); ++i)
            if (i == 0 || sorted[i] != sorted[i - 1]) ++distinct;

        const int bins = 10;
        if (distinct < bins) {
            CHECK_THROWS_AS(fit_quantizer(values, bins), DegenerateVariable);
            continue;
        }
        auto q = fit_quantizer(values, bins);
        for (int k = 1; k < bins; ++k) {
            size_t rank = (static_cast<size_t>(k) * n + bins - 1) / bins;
            double edge = sorted[rank - 1];
            // the quantile value must appear among the (deduplicated) edges
            CHECK(std::find(q.edges.begin(), q.edges.end(), edge) != q.edges.end());
            // defining property: at least `rank` values <= edge, fewer than `rank` below it
            size_t le = 0, lt = 0;
            for (double v : values) {
                if (v <= edge) ++le;
                if (v < edge) ++lt;
            }
            CHECK(le >= rank);
            CHECK(lt < rank);
        }
        // edges are strictly increasing after deduplication
        for (size_t i = 1; i < q.edges.size(); ++i) CHECK(q.edges[i] > q.edges[i - 1]);
    }
}

TEST_CASE("variables with too few distinct values become a single bucket") {
    std::vector<double> flat(50, 3.0);
    CHECK_THROWS_AS(fit_quantizer(flat, 10), DegenerateVariable);

    QuantizerSpec spec;
    spec.add("los_days", flat, 10);
    CHECK(quantize("los_days", 3.0, spec) == "los_days_Q0");
    CHECK(quantize("los_days", 999.0, spec) == "los_days_Q0");
    CHECK_THROWS_AS(quantize("nope", 1.0, spec), UnknownVariable);
}

TEST_CASE("quantizer specs round-trip through their file format") {
    Rng rng(5);
    QuantizerSpec spec;
    std::vector<double> a, b;
    for (int i = 0; i < 500; ++i) a.push_back(rng.uniform(0, 1e6));
    for (int i = 0; i < 500; ++i) b.push_back(rng.uniform(-5, 5));
    spec.add("payment_amount", a, 10);
    spec.add("age_years", b, 10);
    spec.add("flat", std::vector<double>(20, 1.0), 10);

    std::string path = temp_path("quantizers.csv");
    write_quantizer_file(path, spec);
    QuantizerSpec loaded = read_quantizer_file(path);
    REQUIRE(loaded.variables.size() == spec.variables.size());
    for (const auto &[name, q] : spec.variables) {
        REQUIRE(loaded.has(name));
        const auto &lq = loaded.variables.at(name);
        CHECK(lq.bins == q.bins);
        CHECK(lq.degenerate == q.degenerate);
        REQUIRE(lq.edges.size() == q.edges.size());
        for (size_t i = 0; i < q.edges.size(); ++i) CHECK(lq.edges[i] == q.edges[i]);
    }
}

TEST_CASE("vocabulary keeps the most frequent tokens under the cap") {
    std::vector<std::string> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back("common");
    for (int i = 0; i < 5; ++i) corpus.push_back("medium");
    for (int i = 0; i < 5; ++i) corpus.push_back("medium2");
    for (int i = 0; i < 2; ++i) corpus.push_back("rare");
    corpus.push_back("singleton"); // below min_count

    Vocabulary v = build_vocabulary(corpus, 8, 2);
    CHECK(v.size() == 8); // 5 specials + 3 content slots
    for (int32_t s = 0; s < kNumSpecials; ++s) CHECK(v.id_to_token[s] == special_token_string(s));
    CHECK(v.id("common") == 5);
    CHECK(v.id("medium") == 6);  // ties broken alphabetically
    CHECK(v.id("medium2") == 7);
    CHECK(v.id("rare") == kUnkId);      // capped out
    CHECK(v.id("singleton") == kUnkId); // below min_count
    CHECK(v.id("never_seen") == kUnkId);
    CHECK(v.token(5) == "common");
}

TEST_CASE("vocabulary hash is content-derived and order-stable") {
    std::vector<std::string> corpus = {"a", "a", "b", "b", "c", "c"};
    Vocabulary v1 = build_vocabulary(corpus, 100, 1);
    std::vector<std::string> shuffled = {"c", "b", "a", "c", "b", "a"};
    Vocabulary v2 = build_vocabulary(shuffled, 100, 1);
    CHECK(v1.content_hash == v2.content_hash);

    Vocabulary v3 = build_vocabulary({"a", "a", "d", "d"}, 100, 1);
    CHECK(v1.content_hash != v3.content_hash);

    CHECK_THROWS_AS(build_vocabulary({}, 100, 1), EmptyCorpus);
}

TEST_CASE("vocabulary files round-trip and detect tampering") {
    Vocabulary v = build_vocabulary({"alpha", "alpha", "beta", "beta", "gamma", "gamma"}, 100, 1);
    std::string path = temp_path("vocab.tsv");
    write_vocab_file(path, v);
    Vocabulary loaded = read_vocab_file(path);
    CHECK(loaded.id_to_token == v.id_to_token);
    CHECK(loaded.content_hash == v.content_hash);

    // flip one token in the file; the stored hash no longer matches
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = text.find("beta");
    text.replace(pos, 4, "BETA");
    std::ofstream out(path);
    out << text;
    out.close();
    CHECK_THROWS_AS(read_vocab_file(path), VocabHashMismatch);
}

TEST_CASE("tokens report the variable family they describe") {
    CHECK(token_variable("[CLS]") == "special");
    CHECK(token_variable("ICD_CH_07") == "diagnosis");
    CHECK(token_variable("ICD_SUPP_V") == "diagnosis");
    CHECK(token_variable("HCPCS_SURG") == "procedure");
    CHECK(token_variable("TYPE_INP") == "claim_type");
    CHECK(token_variable("DSTATUS_transfer") == "discharge_status");
    CHECK(token_variable("SPEC_06") == "provider_specialty");
    CHECK(token_variable("TOS_1") == "type_of_service");
    CHECK(token_variable("POS_21") == "place_of_service");
    CHECK(token_variable("GAP_8_30") == "time_gap");
    CHECK(token_variable("GENDER_F") == "gender");
    CHECK(token_variable("RACE_white") == "race");
    CHECK(token_variable("ENT_esrd") == "entitlement_reason");
    CHECK(token_variable("payment_amount_Q7") == "payment_amount");
    CHECK(token_variable("age_years_Q0") == "age_years");
    CHECK(token_variable("median_income_NA") == "median_income");
    CHECK(token_variable("los_days_Q10") == "los_days");
}

// --- sequence assembly -------------------------------------------------------

namespace {

struct Fixture {
    BeneficiaryTimeline timeline;
    CountyStats county;
    QuantizerSpec spec;
    LabeledInpatientEvent event;

    Fixture() {
        timeline.beneficiary.beneficiary_id = "B1";
        timeline.beneficiary.date_of_birth = parse_iso_date("1940-06-15", "t");
        timeline.beneficiary.gender = "F";
        timeline.beneficiary.race = "white";
        timeline.beneficiary.entitlement_reason = "old_age";

        county.county_id = "013";
        county.state_id = "22";
        county.obesity_rate = 0.31;
        county.smoking_rate = 0.22;
        county.median_income = 52000;

        Rng rng(3);
        for (const char *name : {"age_years", "payment_amount", "los_days", "obesity_rate",
                                 "smoking_rate", "median_income"}) {
            std::vector<double> values;
            for (int i = 0; i < 200; ++i) values.push_back(rng.uniform(0, 100));
            spec.add(name, values, 10);
        }
    }

    ClaimRecord claim(const std::string &id, ClaimType type, const char *date,
                      std::vector<std::string> dx) {
        ClaimRecord c;
        c.claim_id = id;
        c.beneficiary_id = "B1";
        c.claim_type = type;
        c.service_date = parse_iso_date(date, "t");
        if (type == ClaimType::INP) {
            c.admission_date = c.service_date;
            c.discharge_date = c.service_date + 4;
            c.discharge_status = DischargeStatus::home;
        }
        c.diagnosis_codes = std::move(dx);
        c.payment_amount = 50;
        c.provider_specialty = "06";
        c.type_of_service = "1";
        c.place_of_service = "21";
        return c;
    }
};

int count_token(const AssembledStrings &s, const std::string &t) {
    return static_cast<int>(std::count(s.tokens.begin(), s.tokens.end(), t));
}

} // namespace

TEST_CASE("assembled sequences have the documented section layout") {
    Fixture f;
    f.timeline.claims = {
        f.claim("C1", ClaimType::OUT, "2009-02-20", {"250.0"}),   // 9 days before: history
        f.claim("C2", ClaimType::CAR, "2008-10-01", {"401.9"}),   // 151 days: outside window
        f.claim("C3", ClaimType::INP, "2009-03-01", {"410.1", "428.0"}),
    };
    sort_timeline(f.timeline);
    f.event.index_claim_id = "C3";
    f.event.beneficiary_id = "B1";
    f.event.label = 1;

    AssembledStrings s = assemble_strings(f.event, f.timeline, f.county, f.spec, 256);

    REQUIRE(!s.tokens.empty());
    CHECK(s.tokens[0] == "[CLS]");
    CHECK(count_token(s, "[SEP]") == 3); // after personal, county, history
    CHECK(count_token(s, "GENDER_F") == 1);
    CHECK(count_token(s, "RACE_white") == 1);
    CHECK(count_token(s, "ENT_old_age") == 1);
    CHECK(count_token(s, "GAP_8_30") == 1);   // the history visit, 9 days out
    CHECK(count_token(s, "TYPE_CAR") == 0);   // outside the 90-day window
    CHECK(count_token(s, "TYPE_INP") == 1);
    CHECK(count_token(s, "ICD_CH_07") == 2);  // 410.1 and 428.0 both map there
    CHECK(count_token(s, "ICD_CH_03") == 1);  // 250.0 from the history visit

    // segments appear in order and never interleave
    REQUIRE(s.segment_ids.size() == s.tokens.size());
    for (size_t i = 1; i < s.segment_ids.size(); ++i)
        CHECK(s.segment_ids[i] >= s.segment_ids[i - 1]);
    CHECK(s.segment_ids.front() == static_cast<int32_t>(Segment::PERSONAL));
    CHECK(s.segment_ids.back() == static_cast<int32_t>(Segment::INDEX));

    // time buckets mark history tokens only
    REQUIRE(s.time_bucket_ids.size() == s.tokens.size());
    for (size_t i = 0; i < s.tokens.size(); ++i) {
        bool history_content = s.segment_ids[i] == static_cast<int32_t>(Segment::HISTORY) &&
                               s.tokens[i] != "[SEP]";
        if (history_content) CHECK(s.time_bucket_ids[i] == 3); // 9 days => bucket for 8..30
        else CHECK(s.time_bucket_ids[i] == 0);
    }
}

TEST_CASE("same-day earlier claims are history with a zero gap") {
    Fixture f;
    f.timeline.claims = {
        f.claim("C1", ClaimType::OUT, "2009-03-01", {"250.0"}), // same day, earlier id
        f.claim("C2", ClaimType::INP, "2009-03-01", {"410.1"}),
    };
    sort_timeline(f.timeline);
    f.event.index_claim_id = "C2";
    AssembledStrings s = assemble_strings(f.event, f.timeline, f.county, f.spec, 256);
    CHECK(count_token(s, "GAP_0") == 1);
}

TEST_CASE("events must reference an inpatient claim in the timeline") {
    Fixture f;
    f.timeline.claims = {f.claim("C1", ClaimType::OUT, "2009-03-01", {"250.0"})};
    sort_timeline(f.timeline);
    f.event.index_claim_id = "C1"; // exists but is not inpatient
    CHECK_THROWS_AS(assemble_strings(f.event, f.timeline, f.county, f.spec, 256),
                    EventNotInTimeline);
    f.event.index_claim_id = "C404";
    CHECK_THROWS_AS(assemble_strings(f.event, f.timeline, f.county, f.spec, 256),
                    EventNotInTimeline);
}

TEST_CASE("unknown counties produce placeholder tokens instead of failing") {
    Fixture f;
    f.timeline.claims = {f.claim("C1", ClaimType::INP, "2009-03-01", {"410.1"})};
    sort_timeline(f.timeline);
    f.event.index_claim_id = "C1";
    AssembledStrings s =
        assemble_strings(f.event, f.timeline, CountyStats::unknown(), f.spec, 256);
    CHECK(count_token(s, "obesity_rate_NA") == 1);
    CHECK(count_token(s, "smoking_rate_NA") == 1);
    CHECK(count_token(s, "median_income_NA") == 1);
}

TEST_CASE("truncation drops the oldest history claims first") {
    Fixture f;
    // 30 history visits, 2 tokens+gap each, oldest at 89 days, newest at 2 days
    for (int i = 0; i < 30; ++i) {
        Day when = parse_iso_date("2009-03-01", "t") - (89 - 3 * i);
        f.timeline.claims.push_back(
            f.claim("H" + std::to_string(10 + i), ClaimType::OUT,
                    format_iso_date(when).c_str(), {"250.0"}));
    }
    f.timeline.claims.push_back(f.claim("Z_INDEX", ClaimType::INP, "2009-03-01", {"410.1"}));
    sort_timeline(f.timeline);
    f.event.index_claim_id = "Z_INDEX";

    AssembledStrings full = assemble_strings(f.event, f.timeline, f.county, f.spec, 512);
    AssembledStrings cut = assemble_strings(f.event, f.timeline, f.county, f.spec, 120);
    CHECK(full.tokens.size() > 120);
    CHECK(cut.tokens.size() <= 120);

    // the most recent history gap must survive, the oldest must be gone
    CHECK(count_token(cut, "GAP_1_7") > 0);    // 2-day-old visit kept
    CHECK(count_token(cut, "GAP_61_90") == 0); // oldest visits dropped
    CHECK(count_token(full, "GAP_61_90") > 0);

    // index section always survives truncation
    CHECK(count_token(cut, "TYPE_INP") == 1);
    CHECK(cut.segment_ids.back() == static_cast<int32_t>(Segment::INDEX));
}

TEST_CASE("token ids fall back to the unknown id for out-of-vocabulary strings") {
    Fixture f;
    f.timeline.claims = {f.claim("C1", ClaimType::INP, "2009-03-01", {"410.1"})};
    sort_timeline(f.timeline);
    f.event.index_claim_id = "C1";
    f.event.label = 1;

    // vocabulary trained on a corpus that lacks ICD_CH_07
    Vocabulary v = build_vocabulary({"TYPE_INP", "TYPE_INP", "GENDER_F", "GENDER_F"}, 100, 1);
    LabeledSample sample = assemble_sequence(f.event, f.timeline, f.county, v, f.spec, 256);
    CHECK(sample.tokens[0] == kClsId);
    CHECK(std::count(sample.tokens.begin(), sample.tokens.end(), kUnkId) > 0);
    CHECK(sample.label == 1);
    CHECK(sample.beneficiary_id == "B1");
    CHECK(sample.gender == "F");
    CHECK(sample.race == "white");
}

TEST_CASE("labeled samples round-trip through the samples file") {
    Fixture f;
    f.timeline.claims = {
        f.claim("C0", ClaimType::OUT, "2009-02-25", {"250.0"}),
        f.claim("C1", ClaimType::INP, "2009-03-01", {"410.1"}),
    };
    sort_timeline(f.timeline);
    f.event.index_claim_id = "C1";
    f.event.beneficiary_id = "B1";
    f.event.label = 1;

    Vocabulary v = build_vocabulary({"TYPE_INP", "TYPE_INP", "ICD_CH_07", "ICD_CH_07"}, 100, 1);
    LabeledSample sample = assemble_sequence(f.event, f.timeline, f.county, v, f.spec, 256);

    std::string path = temp_path("samples.txt");
    write_samples_file(path, {sample, sample});
    auto loaded = read_samples_file(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].tokens == sample.tokens);
    CHECK(loaded[0].segment_ids == sample.segment_ids);
    CHECK(loaded[0].time_bucket_ids == sample.time_bucket_ids);
    CHECK(loaded[0].label == sample.label);
    CHECK(loaded[0].beneficiary_id == sample.beneficiary_id);
    CHECK(loaded[0].race == sample.race);
    CHECK(loaded[0].gender == sample.gender);
    CHECK(loaded[0].index_claim_id == sample.index_claim_id);
}

TEST_CASE("demographic masking replaces race and gender tokens with [UNK]") {
    std::vector<std::string> corpus = {"RACE_white", "RACE_white", "GENDER_female",
                                       "GENDER_female", "ICD_CH_02", "ICD_CH_02",
                                       "ENT_old_age", "ENT_old_age"};
    Vocabulary v = build_vocabulary(corpus, 100, 1);

    LabeledSample s;
    s.tokens = {kClsId, v.id("RACE_white"), v.id("GENDER_female"), v.id("ICD_CH_02"),
                v.id("ENT_old_age"), kSepId, kPadId};
    s.segment_ids.assign(s.tokens.size(), 0);
    s.time_bucket_ids.assign(s.tokens.size(), 0);
    s.label = 1;

    auto masked = mask_demographic_tokens({s, s}, v);
    REQUIRE(masked.size() == 2);
    for (const auto &out : masked) {
        CHECK(out.tokens[0] == kClsId);
        CHECK(out.tokens[1] == kUnkId);
        CHECK(out.tokens[2] == kUnkId);
        CHECK(out.tokens[3] == v.id("ICD_CH_02"));
        CHECK(out.tokens[4] == v.id("ENT_old_age"));
        CHECK(out.tokens[5] == kSepId);
        CHECK(out.tokens[6] == kPadId);
        CHECK(out.label == 1);
    }
    // the originals are untouched (copies were taken by value)
    CHECK(s.tokens[1] == v.id("RACE_white"));
}
