#pragma once

#include <string>
#include <vector>

#include "readmit/claims.hpp"

namespace readmit {

struct LabeledInpatientEvent {
    std::string index_claim_id;
    std::string beneficiary_id;
    Day discharge_date = 0;
    int label = 0;
    Day next_admission_date = kNoDate; // kNoDate when no successor

    bool operator==(const LabeledInpatientEvent &) const = default;
};

struct LabelSummary {
    size_t total_claims = 0;
    size_t inp_claims = 0;
    size_t positives = 0;
};

constexpr int kReadmissionWindowDays = 30;

// One event per INP claim: label 1 iff the chronologically next INP admission
// falls within 30 days of this discharge (inclusive), or the stay ends in a
// same-day transfer.  Successor order is (admission_date, claim_id).
std::vector<LabeledInpatientEvent> label_timeline(const BeneficiaryTimeline &timeline);

std::vector<LabeledInpatientEvent> label_dataset(const std::vector<BeneficiaryTimeline> &timelines,
                                                 LabelSummary *summary = nullptr);

void write_label_file(const std::string &path, const std::vector<LabeledInpatientEvent> &events);

} // namespace readmit
