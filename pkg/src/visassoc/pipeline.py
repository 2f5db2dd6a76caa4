"""Stage orchestration over a dataset store.

Each stage reads the store, fans work through the gateway, and appends
results.  Under the replay backend a full run is deterministic end to end.
"""

from dataclasses import dataclass, field

from .corpus import Corpus
from .forge import creative_caption_request, forge_captions
from .gateway import Gateway
from .ladder import (
    AssociationLadder,
    apply_detailed_caption,
    detailed_caption_request,
    mine_associations,
    mining_request,
)
from .salience import ConcretenessLexicon, LexiconTagger, SidecarTagger, extract_salient_elements
from .store import DatasetStore


@dataclass
class StageReport:
    processed: int = 0
    skipped: int = 0
    failed: int = 0
    failures: dict[str, list[str]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "processed": self.processed,
            "skipped": self.skipped,
            "failed": self.failed,
            "failures": {k: sorted(v) for k, v in sorted(self.failures.items())},
        }


def run_ingest(corpus: Corpus, store: DatasetStore, config: dict | None = None) -> StageReport:
    store.append_images(corpus)
    store.save_manifest(config)
    return StageReport(processed=len(corpus))


def run_describe(
    store: DatasetStore, gateway: Gateway, overwrite: bool = False
) -> StageReport:
    """Fill in detailed captions for every record that lacks one."""
    report = StageReport()
    records = list(store.iter_images())
    todo = [
        (i, record)
        for i, record in enumerate(records)
        if overwrite or not record.detailed_caption
    ]
    report.skipped = len(records) - len(todo)
    requests = [
        detailed_caption_request(record, gateway.backend.backend_id)
        for _, record in todo
    ]
    responses = gateway.submit(requests)
    for (i, record), response in zip(todo, responses):
        updated = apply_detailed_caption(record, response)
        records[i] = updated
        if updated.skip_reason:
            report.failed += 1
            report.failures[record.image_id] = [
                updated.skip_reason + (f" ({response.error})" if response.error else "")
            ]
        else:
            report.processed += 1
    store.replace_images(records)
    store.save_manifest()
    return report


def run_mine(
    store: DatasetStore,
    gateway: Gateway,
    lexicon: ConcretenessLexicon,
    tagger: LexiconTagger | SidecarTagger | None = None,
    threshold: float = 3.0,
) -> StageReport:
    """Extract salient elements and mine one ladder per element.

    The initial mining prompts for all images go through one batched submit
    (the gateway memoizes them), so per-image mining fans out up to the
    policy's max_in_flight; only repair reprompts run serially.
    """
    tagger = tagger or LexiconTagger()
    report = StageReport()
    jobs: list[tuple] = []
    for record in store.iter_images():
        if record.skip_reason or not record.detailed_caption:
            report.skipped += 1
            continue
        if isinstance(tagger, SidecarTagger):
            annotation = tagger.annotate(record.image_id)
        else:
            annotation = tagger.annotate(record.short_caption)
        elements = extract_salient_elements(
            record.short_caption, annotation, lexicon, threshold
        )
        if not elements:
            report.skipped += 1
            continue
        jobs.append((record, elements))

    gateway.submit(
        [
            mining_request(record, elements, gateway.backend.backend_id)
            for record, elements in jobs
        ]
    )

    ladders: list[AssociationLadder] = []
    for record, elements in jobs:
        mined, failures = mine_associations(record, elements, gateway)
        ladders.extend(mined)
        if failures:
            report.failures[record.image_id] = [
                f"{word}: {'; '.join(str(d) for d in diags)}"
                for word, diags in failures.items()
            ]
            report.failed += len(failures)
        report.processed += len(mined)
    store.append_ladders(ladders)
    store.save_manifest()
    return report


def run_caption(store: DatasetStore, gateway: Gateway, retries: int = 2) -> StageReport:
    """Generate creative captions for every mined ladder.

    First-attempt requests for the whole store are batched through one
    submit; forge_captions then consumes the memoized responses, and only
    required-word retries dispatch serially.
    """
    report = StageReport()
    by_image: dict[str, list[AssociationLadder]] = {}
    for ladder in store.iter_ladders():
        by_image.setdefault(ladder.image_id, []).append(ladder)
    records = {record.image_id: record for record in store.iter_images()}

    warmup = []
    for image_id, image_ladders in by_image.items():
        record = records.get(image_id)
        if record is None:
            continue
        elements = [ladder.element for ladder in image_ladders]
        for ladder in image_ladders:
            for degree in (1, 2, 3, 4, 5):
                for association in ladder.associations(degree):
                    warmup.append(creative_caption_request(
                        record, elements, ladder.element, association, degree,
                        gateway.backend.backend_id,
                    ))
    gateway.submit(warmup)

    captions = []
    for image_id in records:
        image_ladders = by_image.get(image_id)
        if not image_ladders:
            continue
        generated = forge_captions(
            records[image_id], image_ladders, gateway, retries
        )
        for caption in generated:
            if caption.admitted:
                report.processed += 1
            else:
                report.failed += 1
                report.failures.setdefault(image_id, []).append(
                    f"{caption.element_surface}/{caption.association}: "
                    + ",".join(sorted(caption.flags))
                )
        captions.extend(generated)
    store.append_captions(captions)
    store.save_manifest()
    return report
