"""Decision-core unit tests: connection gate, access evaluation, redaction, wire format.

Expected values for the non-trivial cases were computed with the naive
reference evaluator (oracle_evaluate) and frozen here as literals; each such
test also re-asserts oracle agreement so the two paths cannot drift apart.
"""

import pytest

from healthgate.policy import (
    AccessDecision,
    AccessMode,
    AccessOutcome,
    AccessReason,
    AccessRequest,
    CATALOG,
    ConnectOutcome,
    ConnectReason,
    FieldId,
    FieldGroup,
    FieldSet,
    HealthRecord,
    PolicyFormatError,
    PolicyTable,
    PolicyTuple,
    Role,
    User,
    evaluate_access,
    evaluate_connection,
    field_by_name,
    filter_record,
    format_policy_line,
    format_policy_table,
    oracle_evaluate,
    parse_policy_line,
    parse_policy_table,
)


def user(uid: str, name: str, role: Role) -> User:
    return User(user_id=uid, username=name, role=role, credential_ref=uid)


def table(*specs: str) -> PolicyTable:
    return parse_policy_table("\n".join(specs))


DR_A = user("u1", "dr_a", Role.PHYSICIAN)
PAT_B = user("u2", "pat_b", Role.PATIENT)


class TestRoleAndMode:
    def test_exactly_four_roles(self):
        assert {r.value for r in Role} == {"patient", "physician", "records_officer", "admin"}

    def test_parse_rejects_unknown_role(self):
        with pytest.raises(ValueError, match="wizard"):
            Role.parse("wizard")

    def test_exactly_two_modes(self):
        assert {m.value for m in AccessMode} == {"read", "write"}


class TestCatalog:
    def test_twelve_fields_in_three_groups(self):
        assert len(CATALOG) == 12
        by_group = {}
        for f in CATALOG:
            by_group.setdefault(f.group, set()).add(f.name)
        assert by_group[FieldGroup.ENVIRONMENT] == {"location", "collected_at"}
        assert by_group[FieldGroup.PATIENT_INFO] == {
            "age", "status", "blood_group", "height", "weight", "bgm",
        }
        assert by_group[FieldGroup.CURRENT_MEDICAL] == {
            "heart_rate", "blood_pressure", "sugar_level", "operation_history",
        }

    def test_field_must_belong_to_declared_group(self):
        with pytest.raises(ValueError):
            FieldId(FieldGroup.ENVIRONMENT, "heart_rate")

    def test_unknown_field_name_rejected(self):
        with pytest.raises(ValueError, match="shoe_size"):
            field_by_name("shoe_size")


class TestFieldSet:
    def test_wildcard_semantically_equals_full_catalog(self):
        assert FieldSet.wildcard() == FieldSet.of(CATALOG)
        assert hash(FieldSet.wildcard()) == hash(FieldSet.of(CATALOG))

    def test_intersection_of_wildcards_stays_wildcard(self):
        both = FieldSet.wildcard().intersect(FieldSet.wildcard())
        assert both.is_wildcard

    def test_serialize_round_trip(self):
        fs = FieldSet.of_names(["heart_rate", "age"])
        assert fs.serialize() == "age|heart_rate"
        assert FieldSet.deserialize("age|heart_rate") == fs
        assert FieldSet.deserialize("*").is_wildcard


class TestEvaluateConnection:
    def test_known_user_with_role_grant_establishes(self):
        t = table("physician,read,rec1,heart_rate")
        decision = evaluate_connection("dr_a", [DR_A], t)
        assert decision.outcome is ConnectOutcome.ESTABLISH
        assert decision.reason is ConnectReason.OK

    def test_unknown_username_refused(self):
        t = table("physician,read,rec1,heart_rate")
        decision = evaluate_connection("ghost", [DR_A, PAT_B], t)
        assert decision.outcome is ConnectOutcome.NO_CONNECTION
        assert decision.reason is ConnectReason.UNKNOWN_USER

    def test_empty_table_refuses_known_user(self):
        decision = evaluate_connection("pat_b", [PAT_B], PolicyTable())
        assert decision.outcome is ConnectOutcome.NO_CONNECTION
        assert decision.reason is ConnectReason.NO_POLICY_FOR_ROLE

    def test_grant_for_other_role_does_not_establish(self):
        t = table("physician,read,rec1,heart_rate")
        decision = evaluate_connection("pat_b", [PAT_B], t)
        assert decision.reason is ConnectReason.NO_POLICY_FOR_ROLE


class TestEvaluateAccess:
    def test_intersection_narrows_grant(self):
        # Frozen via oracle: request {heart_rate, blood_pressure} against a
        # {heart_rate} grant yields exactly {heart_rate}.
        t = table("physician,read,rec1,heart_rate")
        req = AccessRequest("u1", AccessMode.READ, "rec1",
                            FieldSet.of_names(["heart_rate", "blood_pressure"]))
        decision = evaluate_access(req, DR_A, t)
        assert decision.outcome is AccessOutcome.GRANTED
        assert decision.granted_fields == FieldSet.of_names(["heart_rate"])
        assert oracle_evaluate(req, DR_A, t) == decision

    def test_wildcard_against_wildcard_grants_everything(self):
        t = table("physician,read,rec1,*")
        req = AccessRequest("u1", AccessMode.READ, "rec1", FieldSet.wildcard())
        decision = evaluate_access(req, DR_A, t)
        assert decision.granted
        assert decision.granted_fields == FieldSet.of(CATALOG)
        assert oracle_evaluate(req, DR_A, t) == decision

    def test_mode_mismatch_denied(self):
        t = table("physician,read,rec1,*", "physician,read,rec2,heart_rate")
        req = AccessRequest("u1", AccessMode.WRITE, "rec1", FieldSet.wildcard())
        decision = evaluate_access(req, DR_A, t)
        assert decision.outcome is AccessOutcome.DENIED
        assert decision.reason is AccessReason.NO_MATCHING_TUPLE
        assert decision.granted_fields.is_empty()
        assert oracle_evaluate(req, DR_A, t) == decision

    def test_empty_intersection_is_denial_not_empty_grant(self):
        t = table("physician,read,rec1,heart_rate")
        req = AccessRequest("u1", AccessMode.READ, "rec1", FieldSet.of_names(["age"]))
        decision = evaluate_access(req, DR_A, t)
        assert decision.outcome is AccessOutcome.DENIED
        assert decision.reason is AccessReason.NO_MATCHING_TUPLE
        assert oracle_evaluate(req, DR_A, t) == decision

    def test_user_id_mismatch_is_a_caller_bug(self):
        req = AccessRequest("someone_else", AccessMode.READ, "rec1", FieldSet.wildcard())
        with pytest.raises(ValueError):
            evaluate_access(req, DR_A, PolicyTable())


class TestOracle:
    def test_empty_table_denies(self):
        req = AccessRequest("u1", AccessMode.READ, "rec1", FieldSet.wildcard())
        decision = oracle_evaluate(req, DR_A, [])
        assert decision.outcome is AccessOutcome.DENIED

    def test_handles_unmerged_duplicate_tuples(self):
        # Two raw tuples sharing a key; the oracle must union them field by field.
        raw = [
            PolicyTuple(Role.PHYSICIAN, AccessMode.READ, "rec1", FieldSet.of_names(["age"])),
            PolicyTuple(Role.PHYSICIAN, AccessMode.READ, "rec1", FieldSet.of_names(["height"])),
        ]
        req = AccessRequest("u1", AccessMode.READ, "rec1", FieldSet.wildcard())
        decision = oracle_evaluate(req, DR_A, raw)
        assert decision.granted_fields == FieldSet.of_names(["age", "height"])
        merged = PolicyTable(raw)
        assert evaluate_access(req, DR_A, merged) == decision


def full_record() -> HealthRecord:
    values = {f: f"v_{f.name}" for f in CATALOG}
    return HealthRecord(file_id="rec1", owner_user_id="u2", values=values)


class TestFilterRecord:
    def test_restricts_to_granted(self):
        out = filter_record(full_record(), FieldSet.of_names(["age", "blood_group"]))
        assert set(out.values_by_name()) == {"age", "blood_group"}
        assert out.file_id == "rec1"
        assert out.owner_user_id == "u2"

    def test_wildcard_is_identity_on_values(self):
        rec = full_record()
        out = filter_record(rec, FieldSet.wildcard())
        assert out.values == rec.values
        assert out.values is not rec.values

    def test_empty_grant_empties_values(self):
        out = filter_record(full_record(), FieldSet.empty())
        assert out.values == {}

    def test_idempotent(self):
        granted = FieldSet.of_names(["heart_rate", "age"])
        once = filter_record(full_record(), granted)
        twice = filter_record(once, granted)
        assert once.values == twice.values


class TestHealthRecord:
    def test_rejects_non_scalar_values(self):
        with pytest.raises(ValueError):
            HealthRecord("rec1", "u2", {field_by_name("age"): [1, 2]})

    def test_rejects_bool_values(self):
        with pytest.raises(ValueError):
            HealthRecord("rec1", "u2", {field_by_name("age"): True})


class TestPolicyTable:
    def test_duplicate_keys_merge_by_union(self):
        t = table("physician,read,rec1,age", "physician,read,rec1,height")
        assert len(t) == 1
        assert t.lookup(Role.PHYSICIAN, AccessMode.READ, "rec1") == FieldSet.of_names(
            ["age", "height"]
        )

    def test_wildcard_absorbs_on_merge(self):
        t = table("physician,read,rec1,age", "physician,read,rec1,*")
        assert t.lookup(Role.PHYSICIAN, AccessMode.READ, "rec1").is_wildcard


class TestWireFormat:
    def test_parse_basic_line(self):
        t = parse_policy_line("physician,read,rec1,heart_rate|blood_pressure")
        assert t.role is Role.PHYSICIAN
        assert t.mode is AccessMode.READ
        assert t.file_id == "rec1"
        assert len(t.fields) == 2

    def test_parse_wildcard_line(self):
        t = parse_policy_line("physician,read,rec1,*")
        assert t.fields.is_wildcard

    def test_tab_separator_accepted(self):
        t = parse_policy_line("physician\tread\trec1\tage|height")
        assert t.fields == FieldSet.of_names(["age", "height"])

    def test_comments_and_blanks_skipped(self):
        t = parse_policy_table("# comment\n\nphysician,read,rec1,*\n")
        assert len(t) == 1

    def test_parse_error_carries_line_number(self):
        with pytest.raises(PolicyFormatError) as err:
            parse_policy_table("physician,read,rec1,*\nwizard,read,rec1,*\n")
        assert err.value.line_no == 2
        assert "wizard" in str(err.value)

    def test_round_trip_is_bit_exact_after_canonicalization(self):
        text = "physician,read,rec1,height|age\npatient,read,rec2,*\nphysician,read,rec1,bgm\n"
        once = format_policy_table(parse_policy_table(text))
        twice = format_policy_table(parse_policy_table(once))
        assert once == twice
        assert once == "patient,read,rec2,*\nphysician,read,rec1,age|bgm|height\n"

    def test_format_line_sorts_fields(self):
        t = PolicyTuple(Role.ADMIN, AccessMode.WRITE, "r", FieldSet.of_names(["weight", "age"]))
        assert format_policy_line(t) == "admin,write,r,age|weight"
