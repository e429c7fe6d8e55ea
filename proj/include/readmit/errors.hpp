#pragma once

#include <stdexcept>
#include <string>

namespace readmit {

struct Error : std::runtime_error {
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

#define READMIT_ERROR(Name)                                                    \
    struct Name : Error {                                                      \
        explicit Name(const std::string &msg) : Error(#Name ": " + msg) {}     \
    }

// claims
READMIT_ERROR(MissingColumn);
READMIT_ERROR(UnparsableDate);
READMIT_ERROR(NegativeAmount);
READMIT_ERROR(UnmappableField);

// discharge before admission; a variant of UnparsableDate so generic date
// handling catches it too
struct InvalidInterval : UnparsableDate {
    explicit InvalidInterval(const std::string &msg) : UnparsableDate("InvalidInterval: " + msg) {}
};

// synthgen
READMIT_ERROR(InvalidConfig);
READMIT_ERROR(UnknownBeneficiary);

// labeler
READMIT_ERROR(UnsortedTimeline);

// vocab / tokenizer
READMIT_ERROR(DegenerateVariable);
READMIT_ERROR(UnknownVariable);
READMIT_ERROR(EmptyCorpus);
READMIT_ERROR(EventNotInTimeline);

// tensor
READMIT_ERROR(ShapeMismatch);
READMIT_ERROR(IndexOutOfVocab);
READMIT_ERROR(TapeAlreadyConsumed);
READMIT_ERROR(NonDeterministicFunction);

// encoder
READMIT_ERROR(IdOutOfRange);
READMIT_ERROR(PositionOutOfRange);

// trainer
READMIT_ERROR(TooFewBeneficiaries);
READMIT_ERROR(NothingToMask);
READMIT_ERROR(GradMissing);
READMIT_ERROR(VocabHashMismatch);

// eval
READMIT_ERROR(SingleClassInput);
READMIT_ERROR(MissingSubgroupTags);

// cli
READMIT_ERROR(UnknownSubcommand);
READMIT_ERROR(MissingArtifact);
READMIT_ERROR(HashMismatch);

#undef READMIT_ERROR

} // namespace readmit
