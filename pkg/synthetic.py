"""Small university knowledge graph in the spirit of the LUBM benchmark.

Only the most specific types are asserted and several roles are only ever
asserted through a sub-role or the inverse, so the ontology adds facts that a
plain graph lookup cannot see.
"""

from __future__ import annotations

from pathlib import Path

from config import logger
from constants import TYPE_RELATION
from utils import sub_rng

ONTOLOGY_LINES: tuple[str, ...] = (
    "sub_concept FullProfessor Professor",
    "sub_concept AssociateProfessor Professor",
    "sub_concept AssistantProfessor Professor",
    "sub_concept Professor Faculty",
    "sub_concept Lecturer Faculty",
    "sub_concept Faculty Person",
    "sub_concept GraduateStudent Student",
    "sub_concept UndergraduateStudent Student",
    "sub_concept Student Person",
    "sub_concept GraduateCourse Course",
    "sub_concept Department Organization",
    "sub_concept University Organization",
    "sub_concept ResearchGroup Organization",
    "sub_role headOf worksFor",
    "sub_role worksFor memberOf",
    "sub_role undergraduateDegreeFrom degreeFrom",
    "sub_role mastersDegreeFrom degreeFrom",
    "sub_role doctoralDegreeFrom degreeFrom",
    "inv_sub_role degreeFrom hasAlumnus",
    "inv_sub_role hasAlumnus degreeFrom",
    "inv_sub_role memberOf hasMember",
    "inv_sub_role hasMember memberOf",
    "domain teacherOf Faculty",
    "range teacherOf Course",
    "domain takesCourse Student",
    "range advisor Professor",
    "domain teachingAssistantOf GraduateStudent",
    "range degreeFrom University",
    "domain publicationAuthor Publication",
    "range publicationAuthor Person",
    "range subOrganizationOf Organization",
    "exists GraduateStudent advisor",
    "exists_typed GraduateStudent takesCourse GraduateCourse",
    "exists Faculty worksFor",
)

# (type, count) per department
_FACULTY = (("FullProfessor", 2), ("AssociateProfessor", 3), ("AssistantProfessor", 3), ("Lecturer", 2))
_GRADUATES = 8
_UNDERGRADUATES = 10
_COURSES = 4
_GRADUATE_COURSES = 4
_PUBLICATIONS = 6


def generate_university_kg(
    seed: int = 0, universities: int = 3, departments: int = 4
) -> tuple[list[tuple[str, str, str]], list[str]]:
    """
    Build the graph and its ontology.

    Args:
        seed: Generator seed; equal seeds give equal output
        universities: Number of universities
        departments: Departments per university

    Returns:
        (sorted unique (head, relation, tail) name triples, ontology lines)
    """
    rng = sub_rng(seed, "synthetic")
    triples: set[tuple[str, str, str]] = set()
    univ_names = [f"Univ{u}" for u in range(universities)]

    def pick(items):
        return items[int(rng.integers(len(items)))]

    def add(h: str, r: str, t: str) -> None:
        triples.add((h, r, t))

    for u, univ in enumerate(univ_names):
        add(univ, TYPE_RELATION, "University")
        for d in range(departments):
            dept = f"{univ}.Dept{d}"
            add(dept, TYPE_RELATION, "Department")
            add(dept, "subOrganizationOf", univ)
            group = f"{dept}.Group0"
            add(group, TYPE_RELATION, "ResearchGroup")
            add(group, "subOrganizationOf", dept)

            faculty, professors = [], []
            for kind, count in _FACULTY:
                for i in range(count):
                    person = f"{dept}.{kind}{i}"
                    faculty.append(person)
                    add(person, TYPE_RELATION, kind)
                    add(person, "undergraduateDegreeFrom", pick(univ_names))
                    if kind != "Lecturer":
                        professors.append(person)
                        add(person, "doctoralDegreeFrom", pick(univ_names))
                    if kind in ("AssociateProfessor", "AssistantProfessor"):
                        add(person, "mastersDegreeFrom", pick(univ_names))
                    if kind == "FullProfessor" and i == 0:
                        add(person, "headOf", dept)
                    else:
                        add(person, "worksFor", dept)

            courses = [f"{dept}.Course{i}" for i in range(_COURSES)]
            grad_courses = [f"{dept}.GraduateCourse{i}" for i in range(_GRADUATE_COURSES)]
            for course in courses:
                add(course, TYPE_RELATION, "Course")
            for course in grad_courses:
                add(course, TYPE_RELATION, "GraduateCourse")
            for i, course in enumerate(courses + grad_courses):
                teacher = faculty[i % len(faculty)] if i < len(faculty) else pick(faculty)
                add(teacher, "teacherOf", course)

            for i in range(_GRADUATES):
                student = f"{dept}.GraduateStudent{i}"
                add(student, TYPE_RELATION, "GraduateStudent")
                add(student, "memberOf", dept)
                add(student, "advisor", pick(professors))
                add(student, "undergraduateDegreeFrom", pick(univ_names))
                for course in rng.choice(grad_courses, size=2, replace=False):
                    add(student, "takesCourse", str(course))
                if rng.random() < 0.5:
                    add(student, "teachingAssistantOf", pick(courses))

            for i in range(_UNDERGRADUATES):
                student = f"{dept}.UndergraduateStudent{i}"
                add(student, TYPE_RELATION, "UndergraduateStudent")
                add(student, "memberOf", dept)
                for course in rng.choice(courses, size=2, replace=False):
                    add(student, "takesCourse", str(course))

            for i in range(_PUBLICATIONS):
                publication = f"{dept}.Publication{i}"
                for author in rng.choice(faculty, size=2, replace=False):
                    add(publication, "publicationAuthor", str(author))

    result = sorted(triples)
    logger.debug(f"Generated {len(result)} triples over {universities}x{departments} departments")
    return result, list(ONTOLOGY_LINES)


def write_university_kg(out_dir: str | Path, seed: int = 0, universities: int = 3, departments: int = 4) -> tuple[Path, Path]:
    """Write ``kg.tsv`` and ``ontology.onto`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    triples, lines = generate_university_kg(seed, universities, departments)
    kg_path = out / "kg.tsv"
    onto_path = out / "ontology.onto"
    kg_path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples), encoding="utf-8")
    onto_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return kg_path, onto_path
