#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "readmit/dates.hpp"

namespace readmit {

enum class ClaimType { DME, CAR, HHA, HOSP, INP, OUT, SNF };
enum class SchemaEra { pre2011, v2011 };
enum class DischargeStatus { none, home, transfer, expired, other };

const char *to_string(ClaimType t);
const char *to_string(SchemaEra e);
const char *to_string(DischargeStatus s);
ClaimType claim_type_from_string(const std::string &s);
SchemaEra schema_era_from_string(const std::string &s);
DischargeStatus discharge_status_from_string(const std::string &s);

struct ClaimRecord {
    std::string claim_id;
    std::string beneficiary_id;
    ClaimType claim_type = ClaimType::OUT;
    Day admission_date = kNoDate;    // kNoDate for non-facility types
    Day discharge_date = kNoDate;
    Day service_date = 0;
    std::vector<std::string> diagnosis_codes;
    std::vector<std::string> procedure_codes;
    DischargeStatus discharge_status = DischargeStatus::none;
    std::string provider_specialty;
    std::string type_of_service;
    std::string place_of_service;
    double payment_amount = 0.0;
    std::string county_id;
    std::string state_id;
    SchemaEra schema_era = SchemaEra::v2011;

    bool has_admission() const { return admission_date != kNoDate; }
    bool has_discharge() const { return discharge_date != kNoDate; }
    // date used for ordering and history windows
    Day event_date() const { return has_admission() ? admission_date : service_date; }

    bool operator==(const ClaimRecord &) const = default;
};

struct Beneficiary {
    std::string beneficiary_id;
    Day date_of_birth = 0;
    std::string gender;
    std::string race;
    std::string entitlement_reason;

    bool operator==(const Beneficiary &) const = default;
};

struct CountyStats {
    std::string county_id;
    std::string state_id;
    double obesity_rate = 0.0;
    double smoking_rate = 0.0;
    double median_income = 0.0;
    bool known = true;

    static CountyStats unknown() {
        CountyStats c;
        c.county_id = "UNKNOWN";
        c.state_id = "UNKNOWN";
        c.known = false;
        return c;
    }
    bool operator==(const CountyStats &) const = default;
};

struct BeneficiaryTimeline {
    Beneficiary beneficiary;
    std::vector<ClaimRecord> claims; // sorted by (event_date, claim_id)
};

// Static rename map between the canonical v2011 column names and their
// pre-2011 file aliases.  The canonical copy ships as data/schema_aliases.csv;
// the built-in table must stay identical to it (unit-tested).
class SchemaAliasTable {
  public:
    static const SchemaAliasTable &builtin();
    static SchemaAliasTable load(const std::string &path);

    // pre2011 alias for a canonical column; throws UnmappableField if absent
    const std::string &alias_of(const std::string &canonical) const;
    bool has(const std::string &canonical) const;
    const std::vector<std::pair<std::string, std::string>> &entries() const { return entries_; }

  private:
    std::vector<std::pair<std::string, std::string>> entries_; // (canonical, pre2011)
};

// canonical v2011 column order of claim files
const std::vector<std::string> &claim_file_columns();

std::vector<ClaimRecord> parse_claim_file(const std::string &path, ClaimType claim_type,
                                          SchemaEra schema_era,
                                          const SchemaAliasTable &aliases = SchemaAliasTable::builtin());

void write_claim_file(const std::string &path, const std::vector<ClaimRecord> &records,
                      SchemaEra file_era,
                      const SchemaAliasTable &aliases = SchemaAliasTable::builtin());

std::vector<ClaimRecord> consolidate_schema(std::vector<ClaimRecord> records,
                                            const SchemaAliasTable &aliases = SchemaAliasTable::builtin());

std::vector<Beneficiary> parse_beneficiary_file(const std::string &path);
void write_beneficiary_file(const std::string &path, const std::vector<Beneficiary> &rows);
std::vector<CountyStats> parse_county_file(const std::string &path);
void write_county_file(const std::string &path, const std::vector<CountyStats> &rows);

std::vector<BeneficiaryTimeline> build_timelines(const std::vector<Beneficiary> &beneficiaries,
                                                 std::vector<ClaimRecord> claims);

void sort_timeline(BeneficiaryTimeline &timeline);

std::unordered_map<std::string, CountyStats>
join_census(const std::vector<BeneficiaryTimeline> &timelines, const std::vector<CountyStats> &counties);

} // namespace readmit
