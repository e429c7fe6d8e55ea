#include "readmit/labeler.hpp"

#include <fstream>

#include "readmit/csv.hpp"
#include "readmit/errors.hpp"

namespace readmit {

std::vector<LabeledInpatientEvent> label_timeline(const BeneficiaryTimeline &timeline) {
    const auto &claims = timeline.claims;
    for (size_t i = 1; i < claims.size(); ++i) {
        const auto &a = claims[i - 1];
        const auto &b = claims[i];
        bool ordered = a.event_date() < b.event_date() ||
                       (a.event_date() == b.event_date() && a.claim_id < b.claim_id);
        if (!ordered)
            throw UnsortedTimeline("beneficiary " + timeline.beneficiary.beneficiary_id +
                                   " at claim " + b.claim_id);
    }

    std::vector<const ClaimRecord *> inp;
    for (const auto &claim : claims)
        if (claim.claim_type == ClaimType::INP) inp.push_back(&claim);

    std::vector<LabeledInpatientEvent> events;
    events.reserve(inp.size());
    for (size_t i = 0; i < inp.size(); ++i) {
        const ClaimRecord &cur = *inp[i];
        LabeledInpatientEvent ev;
        ev.index_claim_id = cur.claim_id;
        ev.beneficiary_id = cur.beneficiary_id;
        ev.discharge_date = cur.discharge_date;
        if (i + 1 < inp.size()) {
            const ClaimRecord &next = *inp[i + 1];
            ev.next_admission_date = next.admission_date;
            int gap = next.admission_date - cur.discharge_date;
            bool transfer_same_day = cur.discharge_status == DischargeStatus::transfer &&
                                     next.admission_date == cur.discharge_date;
            ev.label = (gap <= kReadmissionWindowDays || transfer_same_day) ? 1 : 0;
        }
        events.push_back(std::move(ev));
    }
    return events;
}

std::vector<LabeledInpatientEvent> label_dataset(const std::vector<BeneficiaryTimeline> &timelines,
                                                 LabelSummary *summary) {
    std::vector<LabeledInpatientEvent> all;
    LabelSummary s;
    for (const auto &t : timelines) {
        s.total_claims += t.claims.size();
        auto events = label_timeline(t);
        s.inp_claims += events.size();
        for (const auto &ev : events) s.positives += ev.label;
        all.insert(all.end(), events.begin(), events.end());
    }
    if (summary) *summary = s;
    return all;
}

void write_label_file(const std::string &path, const std::vector<LabeledInpatientEvent> &events) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact(path + " (cannot open for writing)");
    out << "index_claim_id,beneficiary_id,label\n";
    for (const auto &ev : events)
        out << ev.index_claim_id << ',' << ev.beneficiary_id << ',' << ev.label << "\n";
}

} // namespace readmit
