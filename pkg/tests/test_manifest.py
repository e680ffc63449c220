import numpy as np
import pytest

from brainage import (
    MANIFEST_HEADER,
    PREDICTIONS_HEADER,
    InputOutputError,
    ManifestRow,
    PredictionRecord,
    ValidationError,
    read_manifest,
    read_predictions,
    split_cohort,
    write_manifest,
    write_predictions,
)


def row(sid="s1", path="vols/s1.nii", age=42.5, sex="F", site="siteA",
        session=1, pair_id="NA", zygosity="NA"):
    return ManifestRow(sid, path, age, sex, site, session, pair_id, zygosity)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


HEADER_LINE = ",".join(MANIFEST_HEADER)


class TestManifestRoundTrip:
    def test_rows_survive_unchanged(self, tmp_path):
        rows = [
            row(),
            row(sid="s2", path="vols/s2.nii.gz", age=77.125, sex="M",
                session=2),
            row(sid="t1a", path="a.nii", age=30.0, pair_id="PAIR1",
                zygosity="MZ"),
            row(sid="t1b", path="b.nii", age=30.0, pair_id="PAIR1",
                zygosity="MZ"),
        ]
        p = tmp_path / "manifest.csv"
        write_manifest(rows, p)
        assert read_manifest(p) == rows

    def test_age_precision_survives(self, tmp_path):
        rows = [row(age=41.99999999999999)]
        p = tmp_path / "m.csv"
        write_manifest(rows, p)
        assert read_manifest(p)[0].age_years == 41.99999999999999

    def test_written_header_is_contract(self, tmp_path):
        p = tmp_path / "m.csv"
        write_manifest([row()], p)
        assert p.read_text().splitlines()[0] == HEADER_LINE

    def test_empty_write_refused(self, tmp_path):
        with pytest.raises(ValidationError, match="empty"):
            write_manifest([], tmp_path / "m.csv")


class TestManifestValidation:
    def test_missing_file(self, tmp_path):
        with pytest.raises(InputOutputError):
            read_manifest(tmp_path / "nope.csv")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        with pytest.raises(ValidationError, match="empty"):
            read_manifest(p)

    def test_header_only(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE])
        with pytest.raises(ValidationError, match="no data rows"):
            read_manifest(p)

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, ["subject,age", "s1,40"])
        with pytest.raises(ValidationError, match="header"):
            read_manifest(p)

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, "s1,a.nii,40,F,siteA,1,NA"])
        with pytest.raises(ValidationError, match="line 2.*columns"):
            read_manifest(p)

    @pytest.mark.parametrize("age,column", [
        ("forty", "age_years"),
        ("nan", "age_years"),
        ("0", "age_years"),
        ("120", "age_years"),
        ("-3", "age_years"),
    ])
    def test_bad_age_names_line_and_column(self, tmp_path, age, column):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, f"s1,a.nii,{age},F,siteA,1,NA,NA"])
        with pytest.raises(ValidationError, match=f"line 2.*{column}"):
            read_manifest(p)

    def test_bad_sex(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, "s1,a.nii,40,X,siteA,1,NA,NA"])
        with pytest.raises(ValidationError, match="sex"):
            read_manifest(p)

    def test_bad_session(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, "s1,a.nii,40,F,siteA,one,NA,NA"])
        with pytest.raises(ValidationError, match="session"):
            read_manifest(p)

    def test_bad_zygosity(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, "s1,a.nii,40,F,siteA,1,PAIR1,XY"])
        with pytest.raises(ValidationError, match="zygosity"):
            read_manifest(p)

    def test_empty_subject_id(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, ",a.nii,40,F,siteA,1,NA,NA"])
        with pytest.raises(ValidationError, match="subject_id"):
            read_manifest(p)

    def test_whitespace_is_stripped(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE, " s1 , a.nii , 40 , F , siteA , 1 , , NA"])
        parsed = read_manifest(p)[0]
        assert parsed.subject_id == "s1"
        assert parsed.sex == "F"
        assert parsed.pair_id == "NA"  # empty pair field normalizes to NA

    def test_duplicate_subject_session(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [
            HEADER_LINE,
            "s1,a.nii,40,F,siteA,1,NA,NA",
            "s1,b.nii,40,F,siteA,1,NA,NA",
        ])
        with pytest.raises(ValidationError, match="duplicate"):
            read_manifest(p)

    def test_same_subject_two_sessions_ok(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [
            HEADER_LINE,
            "s1,a.nii,40,F,siteA,1,NA,NA",
            "s1,b.nii,40,F,siteA,2,NA,NA",
        ])
        assert len(read_manifest(p)) == 2

    @pytest.mark.parametrize("extra_rows", [
        ["t1a,a.nii,30,F,siteA,1,PAIR1,MZ"],  # lone member
        ["t1a,a.nii,30,F,siteA,1,PAIR1,MZ",
         "t1b,b.nii,30,F,siteA,1,PAIR1,MZ",
         "t1c,c.nii,30,F,siteA,1,PAIR1,MZ"],  # three members
    ])
    def test_pair_must_have_two_members(self, tmp_path, extra_rows):
        p = tmp_path / "m.csv"
        write_lines(p, [HEADER_LINE] + extra_rows)
        with pytest.raises(ValidationError, match="PAIR1"):
            read_manifest(p)

    def test_pair_zygosity_must_agree(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [
            HEADER_LINE,
            "t1a,a.nii,30,F,siteA,1,PAIR1,MZ",
            "t1b,b.nii,30,F,siteA,1,PAIR1,DZ",
        ])
        with pytest.raises(ValidationError, match="zygosity"):
            read_manifest(p)

    def test_pair_zygosity_na_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        write_lines(p, [
            HEADER_LINE,
            "t1a,a.nii,30,F,siteA,1,PAIR1,NA",
            "t1b,b.nii,30,F,siteA,1,PAIR1,NA",
        ])
        with pytest.raises(ValidationError, match="zygosity"):
            read_manifest(p)


class TestPredictionsRoundTrip:
    def test_records_survive(self, tmp_path):
        records = [
            PredictionRecord("s1", 40.0, 43.25, brain_pad=3.25, session=1),
            PredictionRecord("s2", 61.5, 58.0, brain_pad=-3.5, session=2),
        ]
        p = tmp_path / "pred.csv"
        write_predictions(records, p)
        loaded = read_predictions(p)
        assert [r.subject_id for r in loaded] == ["s1", "s2"]
        assert loaded[0].predicted_age == 43.25
        assert loaded[1].brain_pad == -3.5
        assert loaded[1].session == 2

    def test_missing_pad_computed_on_write(self, tmp_path):
        p = tmp_path / "pred.csv"
        write_predictions([PredictionRecord("s1", 40.0, 43.25)], p)
        loaded = read_predictions(p)
        assert loaded[0].brain_pad == pytest.approx(3.25, abs=1e-12)
        assert loaded[0].session == 1  # None normalizes to session 1

    def test_written_header_is_contract(self, tmp_path):
        p = tmp_path / "pred.csv"
        write_predictions([PredictionRecord("s1", 40.0, 41.0)], p)
        assert p.read_text().splitlines()[0] == ",".join(PREDICTIONS_HEADER)

    def test_empty_write_refused(self, tmp_path):
        with pytest.raises(ValidationError, match="empty"):
            write_predictions([], tmp_path / "pred.csv")


class TestPredictionsValidation:
    def test_missing_file(self, tmp_path):
        with pytest.raises(InputOutputError):
            read_predictions(tmp_path / "nope.csv")

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "pred.csv"
        write_lines(p, ["id,pred", "s1,40"])
        with pytest.raises(ValidationError, match="header"):
            read_predictions(p)

    def test_non_finite_rejected(self, tmp_path):
        p = tmp_path / "pred.csv"
        write_lines(p, [",".join(PREDICTIONS_HEADER), "s1,1,40.0,nan,0.0"])
        with pytest.raises(ValidationError, match="line 2"):
            read_predictions(p)

    def test_non_numeric_rejected(self, tmp_path):
        p = tmp_path / "pred.csv"
        write_lines(p, [",".join(PREDICTIONS_HEADER), "s1,1,40.0,young,0.0"])
        with pytest.raises(ValidationError, match="line 2"):
            read_predictions(p)

    def test_no_data_rows(self, tmp_path):
        p = tmp_path / "pred.csv"
        write_lines(p, [",".join(PREDICTIONS_HEADER)])
        with pytest.raises(ValidationError, match="no data rows"):
            read_predictions(p)


def cohort_rows(n, prefix="s"):
    return [row(sid=f"{prefix}{i:04d}", path=f"{prefix}{i:04d}.nii")
            for i in range(n)]


def twin_rows(n_pairs):
    rows = []
    for j in range(n_pairs):
        for t in "ab":
            rows.append(row(sid=f"t{j:03d}{t}", path=f"t{j:03d}{t}.nii",
                            pair_id=f"PAIR{j:03d}", zygosity="MZ"))
    return rows


class TestSplitCohort:
    def test_counts_partition_exactly(self):
        rows = cohort_rows(20)
        train, val, test = split_cohort(rows, counts=[14, 3, 3], seed=1)
        assert (len(train), len(val), len(test)) == (14, 3, 3)
        all_ids = sorted(train + val + test)
        assert all_ids == sorted(r.subject_id for r in rows)

    def test_fractions_largest_takes_remainder(self):
        rows = cohort_rows(2001)
        train, val, test = split_cohort(rows, fractions=[0.8, 0.1, 0.1],
                                        seed=0)
        assert (len(train), len(val), len(test)) == (1601, 200, 200)

    def test_pairs_stay_together(self):
        rows = twin_rows(10) + cohort_rows(5)
        train, val, test = split_cohort(rows, counts=[15, 6, 4], seed=3)
        membership = {}
        for name, ids in (("train", train), ("val", val), ("test", test)):
            for sid in ids:
                membership[sid] = name
        for j in range(10):
            assert membership[f"t{j:03d}a"] == membership[f"t{j:03d}b"]

    def test_multisession_subject_counted_once(self):
        rows = [row(sid="s1", session=1), row(sid="s1", session=2),
                row(sid="s2"), row(sid="s3")]
        train, val, test = split_cohort(rows, counts=[1, 1, 1], seed=0)
        assert sorted(train + val + test) == ["s1", "s2", "s3"]

    def test_deterministic_for_seed(self):
        rows = cohort_rows(30)
        a = split_cohort(rows, counts=[20, 5, 5], seed=7)
        b = split_cohort(rows, counts=[20, 5, 5], seed=7)
        assert a == b
        c = split_cohort(rows, counts=[20, 5, 5], seed=8)
        assert a != c

    def test_counts_must_sum_to_cohort(self):
        with pytest.raises(ValidationError, match="sum"):
            split_cohort(cohort_rows(10), counts=[5, 3, 3])

    def test_exactly_one_of_counts_fractions(self):
        rows = cohort_rows(10)
        with pytest.raises(ValidationError, match="exactly one"):
            split_cohort(rows)
        with pytest.raises(ValidationError, match="exactly one"):
            split_cohort(rows, counts=[8, 1, 1], fractions=[0.8, 0.1, 0.1])

    def test_bad_fractions(self):
        rows = cohort_rows(10)
        with pytest.raises(ValidationError):
            split_cohort(rows, fractions=[0.5, 0.5, 0.5])
        with pytest.raises(ValidationError):
            split_cohort(rows, fractions=[1.0, 0.0, 0.0])

    def test_conflicting_pair_assignment(self):
        rows = [
            row(sid="s1", pair_id="PAIR1", zygosity="MZ"),
            row(sid="s1", session=2, pair_id="PAIR2", zygosity="MZ"),
        ]
        with pytest.raises(ValidationError, match="conflicting"):
            split_cohort(rows, counts=[1, 0, 0])

    def test_infeasible_unit_packing(self):
        rows = twin_rows(2)
        with pytest.raises(ValidationError, match="infeasible"):
            split_cohort(rows, counts=[1, 1, 2])

    def test_pairs_first_packing_fills_feasible_counts(self):
        # 3 pairs + 4 singles into [4, 4, 2]: feasible only if pairs are
        # placed before singletons
        rows = twin_rows(3) + cohort_rows(4)
        for seed in range(10):
            train, val, test = split_cohort(rows, counts=[4, 4, 2], seed=seed)
            assert (len(train), len(val), len(test)) == (4, 4, 2)
