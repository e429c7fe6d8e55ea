#include "readmit/claims.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>

#include "readmit/csv.hpp"
#include "readmit/errors.hpp"

namespace readmit {

const char *to_string(ClaimType t) {
    switch (t) {
    case ClaimType::DME: return "DME";
    case ClaimType::CAR: return "CAR";
    case ClaimType::HHA: return "HHA";
    case ClaimType::HOSP: return "HOSP";
    case ClaimType::INP: return "INP";
    case ClaimType::OUT: return "OUT";
    case ClaimType::SNF: return "SNF";
    }
    return "?";
}

const char *to_string(SchemaEra e) { return e == SchemaEra::pre2011 ? "pre2011" : "v2011"; }

const char *to_string(DischargeStatus s) {
    switch (s) {
    case DischargeStatus::none: return "";
    case DischargeStatus::home: return "home";
    case DischargeStatus::transfer: return "transfer";
    case DischargeStatus::expired: return "expired";
    case DischargeStatus::other: return "other";
    }
    return "";
}

ClaimType claim_type_from_string(const std::string &s) {
    for (ClaimType t : {ClaimType::DME, ClaimType::CAR, ClaimType::HHA, ClaimType::HOSP,
                        ClaimType::INP, ClaimType::OUT, ClaimType::SNF})
        if (s == to_string(t)) return t;
    throw Error("unknown claim type '" + s + "'");
}

SchemaEra schema_era_from_string(const std::string &s) {
    if (s == "pre2011") return SchemaEra::pre2011;
    if (s == "v2011") return SchemaEra::v2011;
    throw Error("unknown schema era '" + s + "'");
}

DischargeStatus discharge_status_from_string(const std::string &s) {
    if (s.empty()) return DischargeStatus::none;
    if (s == "home") return DischargeStatus::home;
    if (s == "transfer") return DischargeStatus::transfer;
    if (s == "expired") return DischargeStatus::expired;
    if (s == "other") return DischargeStatus::other;
    throw Error("unknown discharge status '" + s + "'");
}

const std::vector<std::string> &claim_file_columns() {
    static const std::vector<std::string> cols = {
        "claim_id",        "beneficiary_id",  "claim_type",      "admission_date",
        "discharge_date",  "service_date",    "diagnosis_codes", "procedure_codes",
        "discharge_status", "provider_specialty", "type_of_service", "place_of_service",
        "payment_amount",  "county_id",       "state_id",
    };
    return cols;
}

const SchemaAliasTable &SchemaAliasTable::builtin() {
    static const SchemaAliasTable table = [] {
        SchemaAliasTable t;
        t.entries_ = {
            {"claim_id", "CLM_ID"},
            {"beneficiary_id", "BENE_ID"},
            {"claim_type", "CLM_TYPE_CD"},
            {"admission_date", "ADMSN_DT"},
            {"discharge_date", "DSCHRG_DT"},
            {"service_date", "SRVC_DT"},
            {"diagnosis_codes", "DGNS_CDS"},
            {"procedure_codes", "PRCDR_CDS"},
            {"discharge_status", "DSCHRG_STUS_CD"},
            {"provider_specialty", "PRVDR_SPCLTY"},
            {"type_of_service", "TYPE_SRVC_CD"},
            {"place_of_service", "PLC_SRVC_CD"},
            {"payment_amount", "CLM_PMT_AMT"},
            {"county_id", "CNTY_CD"},
            {"state_id", "STATE_CD"},
        };
        return t;
    }();
    return table;
}

SchemaAliasTable SchemaAliasTable::load(const std::string &path) {
    CsvTable csv = read_csv(path);
    int c0 = csv.find("v2011");
    int c1 = csv.find("pre2011");
    if (c0 < 0 || c1 < 0) throw MissingColumn(path + ": alias table needs v2011,pre2011 columns");
    SchemaAliasTable t;
    for (const auto &row : csv.rows) t.entries_.emplace_back(row[c0], row[c1]);
    return t;
}

const std::string &SchemaAliasTable::alias_of(const std::string &canonical) const {
    for (const auto &[canon, alias] : entries_)
        if (canon == canonical) return alias;
    throw UnmappableField("no pre2011 alias for field '" + canonical + "'");
}

bool SchemaAliasTable::has(const std::string &canonical) const {
    for (const auto &[canon, alias] : entries_)
        if (canon == canonical) return true;
    return false;
}

namespace {

std::string format_amount(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Day parse_optional_date(const std::string &text, const std::string &context, bool required) {
    if (text.empty()) {
        if (required) throw UnparsableDate(context + ": empty but required");
        return kNoDate;
    }
    return parse_iso_date(text, context);
}

std::vector<std::string> parse_code_list(const std::string &field) {
    if (field.empty()) return {};
    return split(field, '|');
}

} // namespace

std::vector<ClaimRecord> parse_claim_file(const std::string &path, ClaimType claim_type,
                                          SchemaEra schema_era, const SchemaAliasTable &aliases) {
    CsvTable csv = read_csv(path);

    // resolve every canonical column to a file column index under the era's names
    std::vector<int> col(claim_file_columns().size());
    for (size_t i = 0; i < claim_file_columns().size(); ++i) {
        const std::string &canonical = claim_file_columns()[i];
        const std::string &name =
            schema_era == SchemaEra::pre2011 ? aliases.alias_of(canonical) : canonical;
        col[i] = csv.find(name);
        if (col[i] < 0) throw MissingColumn(path + ": column '" + name + "'");
    }
    auto field = [&](const std::vector<std::string> &row, size_t i) -> const std::string & {
        return row[col[i]];
    };

    std::vector<ClaimRecord> records;
    records.reserve(csv.rows.size());
    for (size_t r = 0; r < csv.rows.size(); ++r) {
        const auto &row = csv.rows[r];
        if (row.size() != csv.header.size())
            throw MissingColumn(path + " row " + std::to_string(r + 1) + ": field count mismatch");
        std::string where = path + " row " + std::to_string(r + 1);

        ClaimRecord rec;
        rec.claim_id = field(row, 0);
        rec.beneficiary_id = field(row, 1);
        rec.claim_type = claim_type_from_string(field(row, 2));
        if (rec.claim_type != claim_type)
            throw Error(where + ": claim_type '" + field(row, 2) + "' in a " +
                        to_string(claim_type) + " file");
        bool facility_required = claim_type == ClaimType::INP;
        rec.admission_date =
            parse_optional_date(field(row, 3), where + " field admission_date", facility_required);
        rec.discharge_date =
            parse_optional_date(field(row, 4), where + " field discharge_date", facility_required);
        rec.service_date = parse_iso_date(field(row, 5), where + " field service_date");
        rec.diagnosis_codes = parse_code_list(field(row, 6));
        rec.procedure_codes = parse_code_list(field(row, 7));
        rec.discharge_status = discharge_status_from_string(field(row, 8));
        rec.provider_specialty = field(row, 9);
        rec.type_of_service = field(row, 10);
        rec.place_of_service = field(row, 11);
        const std::string &amount = field(row, 12);
        char *end = nullptr;
        rec.payment_amount = std::strtod(amount.c_str(), &end);
        if (amount.empty() || end != amount.c_str() + amount.size())
            throw Error(where + " field payment_amount: '" + amount + "' not numeric");
        if (rec.payment_amount < 0)
            throw NegativeAmount(where + " field payment_amount: " + amount);
        rec.county_id = field(row, 13);
        rec.state_id = field(row, 14);
        rec.schema_era = schema_era;

        if (rec.has_admission() && rec.has_discharge() && rec.discharge_date < rec.admission_date)
            throw InvalidInterval(where + " field discharge_date: discharge " +
                                  format_iso_date(rec.discharge_date) + " before admission " +
                                  format_iso_date(rec.admission_date));
        records.push_back(std::move(rec));
    }
    return records;
}

void write_claim_file(const std::string &path, const std::vector<ClaimRecord> &records,
                      SchemaEra file_era, const SchemaAliasTable &aliases) {
    CsvTable csv;
    for (const auto &canonical : claim_file_columns())
        csv.header.push_back(file_era == SchemaEra::pre2011 ? aliases.alias_of(canonical)
                                                            : canonical);
    for (const auto &rec : records) {
        csv.rows.push_back({
            rec.claim_id,
            rec.beneficiary_id,
            to_string(rec.claim_type),
            rec.has_admission() ? format_iso_date(rec.admission_date) : "",
            rec.has_discharge() ? format_iso_date(rec.discharge_date) : "",
            format_iso_date(rec.service_date),
            join(rec.diagnosis_codes, '|'),
            join(rec.procedure_codes, '|'),
            to_string(rec.discharge_status),
            rec.provider_specialty,
            rec.type_of_service,
            rec.place_of_service,
            format_amount(rec.payment_amount),
            rec.county_id,
            rec.state_id,
        });
    }
    write_csv(path, csv);
}

std::vector<ClaimRecord> consolidate_schema(std::vector<ClaimRecord> records,
                                            const SchemaAliasTable &aliases) {
    for (auto &rec : records) {
        if (rec.schema_era == SchemaEra::v2011) continue;
        for (const auto &canonical : claim_file_columns())
            if (!aliases.has(canonical))
                throw UnmappableField("claim " + rec.claim_id + ": field '" + canonical +
                                      "' missing from alias table");
        rec.schema_era = SchemaEra::v2011;
    }
    return records;
}

std::vector<Beneficiary> parse_beneficiary_file(const std::string &path) {
    CsvTable csv = read_csv(path);
    for (const char *name : {"beneficiary_id", "date_of_birth", "gender", "race", "entitlement_reason"})
        if (csv.find(name) < 0) throw MissingColumn(path + ": column '" + std::string(name) + "'");
    std::vector<Beneficiary> out;
    for (size_t r = 0; r < csv.rows.size(); ++r) {
        const auto &row = csv.rows[r];
        Beneficiary b;
        b.beneficiary_id = row[csv.find("beneficiary_id")];
        b.date_of_birth = parse_iso_date(row[csv.find("date_of_birth")],
                                         path + " row " + std::to_string(r + 1) + " field date_of_birth");
        b.gender = row[csv.find("gender")];
        b.race = row[csv.find("race")];
        b.entitlement_reason = row[csv.find("entitlement_reason")];
        out.push_back(std::move(b));
    }
    return out;
}

void write_beneficiary_file(const std::string &path, const std::vector<Beneficiary> &rows) {
    CsvTable csv;
    csv.header = {"beneficiary_id", "date_of_birth", "gender", "race", "entitlement_reason"};
    for (const auto &b : rows)
        csv.rows.push_back({b.beneficiary_id, format_iso_date(b.date_of_birth), b.gender, b.race,
                            b.entitlement_reason});
    write_csv(path, csv);
}

std::vector<CountyStats> parse_county_file(const std::string &path) {
    CsvTable csv = read_csv(path);
    for (const char *name : {"county_id", "state_id", "obesity_rate", "smoking_rate", "median_income"})
        if (csv.find(name) < 0) throw MissingColumn(path + ": column '" + std::string(name) + "'");
    std::vector<CountyStats> out;
    for (const auto &row : csv.rows) {
        CountyStats c;
        c.county_id = row[csv.find("county_id")];
        c.state_id = row[csv.find("state_id")];
        c.obesity_rate = std::stod(row[csv.find("obesity_rate")]);
        c.smoking_rate = std::stod(row[csv.find("smoking_rate")]);
        c.median_income = std::stod(row[csv.find("median_income")]);
        out.push_back(std::move(c));
    }
    return out;
}

void write_county_file(const std::string &path, const std::vector<CountyStats> &rows) {
    CsvTable csv;
    csv.header = {"county_id", "state_id", "obesity_rate", "smoking_rate", "median_income"};
    for (const auto &c : rows)
        csv.rows.push_back({c.county_id, c.state_id, format_amount(c.obesity_rate),
                            format_amount(c.smoking_rate), format_amount(c.median_income)});
    write_csv(path, csv);
}

void sort_timeline(BeneficiaryTimeline &timeline) {
    std::sort(timeline.claims.begin(), timeline.claims.end(),
              [](const ClaimRecord &a, const ClaimRecord &b) {
                  if (a.event_date() != b.event_date()) return a.event_date() < b.event_date();
                  return a.claim_id < b.claim_id;
              });
}

std::vector<BeneficiaryTimeline> build_timelines(const std::vector<Beneficiary> &beneficiaries,
                                                 std::vector<ClaimRecord> claims) {
    std::unordered_map<std::string, size_t> index;
    std::vector<BeneficiaryTimeline> out;
    out.reserve(beneficiaries.size());
    for (const auto &b : beneficiaries) {
        index[b.beneficiary_id] = out.size();
        out.push_back({b, {}});
    }
    for (auto &claim : claims) {
        auto it = index.find(claim.beneficiary_id);
        if (it == index.end())
            throw Error("claim " + claim.claim_id + " references unknown beneficiary " +
                        claim.beneficiary_id);
        out[it->second].claims.push_back(std::move(claim));
    }
    for (auto &t : out) sort_timeline(t);
    return out;
}

std::unordered_map<std::string, CountyStats>
join_census(const std::vector<BeneficiaryTimeline> &timelines, const std::vector<CountyStats> &counties) {
    std::unordered_map<std::string, CountyStats> by_key;
    for (const auto &c : counties) by_key[c.county_id + "|" + c.state_id] = c;

    std::unordered_map<std::string, CountyStats> out;
    for (const auto &t : timelines) {
        const ClaimRecord *latest = nullptr;
        for (const auto &claim : t.claims) {
            if (claim.claim_type != ClaimType::INP) continue;
            // claims are sorted, so a later INP claim overrides an earlier one
            latest = &claim;
        }
        CountyStats stats = CountyStats::unknown();
        if (latest) {
            auto it = by_key.find(latest->county_id + "|" + latest->state_id);
            if (it != by_key.end()) stats = it->second;
        }
        out[t.beneficiary.beneficiary_id] = stats;
    }
    return out;
}

} // namespace readmit
