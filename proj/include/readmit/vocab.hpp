#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "readmit/claims.hpp"
#include "readmit/labeler.hpp"

namespace readmit {

constexpr int32_t kPadId = 0;
constexpr int32_t kMaskId = 1;
constexpr int32_t kUnkId = 2;
constexpr int32_t kClsId = 3;
constexpr int32_t kSepId = 4;
constexpr int32_t kNumSpecials = 5;

const char *special_token_string(int32_t id); // "[PAD]".."[SEP]"
inline const char *kUnkToken = "[UNK]";

enum class Segment : int32_t { PERSONAL = 0, COUNTY = 1, HISTORY = 2, INDEX = 3 };
constexpr int32_t kNumSegments = 4;

// time-gap buckets over days-before-index; id 0 = not a history token
constexpr int32_t kNumTimeBuckets = 5;
int32_t gap_bucket(int days_before);        // 1..5 for {0, 1-7, 8-30, 31-60, 61-90}
std::string gap_token(int days_before);     // "GAP_0", "GAP_1_7", ...
constexpr int kHistoryWindowDays = 90;

struct IcdChapterRange {
    int lo, hi;
    const char *token;
};
const std::vector<IcdChapterRange> &icd_chapter_ranges();

std::string group_icd(const std::string &code);
std::string group_hcpcs(const std::string &code);

struct VariableQuantizer {
    std::vector<double> edges; // strictly increasing
    int bins = 10;
    bool degenerate = false; // single-token encoding
};

// nearest-rank quantile edges at 1/B .. (B-1)/B; throws DegenerateVariable
// when fewer than B distinct values
VariableQuantizer fit_quantizer(std::vector<double> values, int bins);

struct QuantizerSpec {
    std::map<std::string, VariableQuantizer> variables;

    // fit one variable; degenerate variables are registered with a
    // single-token encoding instead of propagating the error
    void add(const std::string &name, std::vector<double> values, int bins);
    bool has(const std::string &name) const { return variables.count(name) > 0; }
};

// "<var>_Qk", k = number of edges <= value (right-open bins)
std::string quantize(const std::string &variable, double value, const QuantizerSpec &spec);

void write_quantizer_file(const std::string &path, const QuantizerSpec &spec);
QuantizerSpec read_quantizer_file(const std::string &path);

struct Vocabulary {
    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int32_t> token_to_id;
    uint64_t content_hash = 0;

    int32_t id(const std::string &token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnkId : it->second;
    }
    const std::string &token(int32_t id) const { return id_to_token.at(id); }
    size_t size() const { return id_to_token.size(); }
};

constexpr size_t kDefaultVocabCap = 25000;
constexpr int kDefaultMinCount = 2;

Vocabulary build_vocabulary(const std::vector<std::string> &corpus, size_t cap = kDefaultVocabCap,
                            int min_count = kDefaultMinCount);
void write_vocab_file(const std::string &path, const Vocabulary &vocab);
Vocabulary read_vocab_file(const std::string &path);

// variable family of a token string ("payment_amount_Q3" -> "payment_amount",
// "ICD_CH_07" -> "diagnosis"); specials map to "special"
std::string token_variable(const std::string &token);

struct LabeledSample {
    std::vector<int32_t> tokens;
    std::vector<int32_t> segment_ids;
    std::vector<int32_t> time_bucket_ids;
    int label = 0;
    std::string beneficiary_id;
    std::string race;
    std::string gender;
    std::string index_claim_id;
};

constexpr int kDefaultLMax = 256;

// token strings before vocabulary lookup; shared by vocabulary building and
// sample assembly so both see identical sequences
struct AssembledStrings {
    std::vector<std::string> tokens;
    std::vector<int32_t> segment_ids;
    std::vector<int32_t> time_bucket_ids;
};

std::vector<std::string> claim_token_strings(const ClaimRecord &claim, const QuantizerSpec &spec);
std::vector<std::string> personal_token_strings(const Beneficiary &b, Day index_admission,
                                                const QuantizerSpec &spec);
std::vector<std::string> county_token_strings(const CountyStats &county, const QuantizerSpec &spec);

AssembledStrings assemble_strings(const LabeledInpatientEvent &event,
                                  const BeneficiaryTimeline &timeline, const CountyStats &county,
                                  const QuantizerSpec &spec, int l_max = kDefaultLMax);

LabeledSample assemble_sequence(const LabeledInpatientEvent &event,
                                const BeneficiaryTimeline &timeline, const CountyStats &county,
                                const Vocabulary &vocab, const QuantizerSpec &spec,
                                int l_max = kDefaultLMax);

void write_samples_file(const std::string &path, const std::vector<LabeledSample> &samples);
std::vector<LabeledSample> read_samples_file(const std::string &path);

// Copies the samples with every token of the race and gender families replaced
// by [UNK], the input for the demographics-masked retrain of the bias audit.
std::vector<LabeledSample> mask_demographic_tokens(std::vector<LabeledSample> samples,
                                                   const Vocabulary &vocab);

// distinct raw variable=value strings before grouping/quantization; the
// numerator of the vocabulary-compression ratio
size_t raw_variable_value_count(const std::vector<BeneficiaryTimeline> &timelines,
                                const std::vector<CountyStats> &counties);

} // namespace readmit
