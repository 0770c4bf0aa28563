"""Optional transcription pass over question and answer images."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .dataset import Dataset, ImageRef, OcrRecord, sha256_file, with_ocr
from .errors import InputError
from .gateway import Gateway
from .prompts import RenderedPrompt

log = logging.getLogger(__name__)

OCR_PROMPT = (
    "Transcribe all handwritten and printed text in the image exactly as written. "
    "Write mathematical notation in LaTeX. Return only the transcription."
)
OCR_PROMPT_HASH = hashlib.sha256(OCR_PROMPT.encode("utf-8")).hexdigest()


def ocr_extract(image_ref: ImageRef, gateway: Gateway, root: str | Path | None = None) -> OcrRecord:
    root = Path(root) if root is not None else (gateway.dataset.root if gateway.dataset else Path("."))
    path = image_ref.resolve(root)
    try:
        digest = sha256_file(path)
    except OSError as exc:
        raise InputError(f"cannot read image {image_ref.path}: {exc}") from exc
    if digest != image_ref.sha256:
        raise InputError(f"hash mismatch for {image_ref.path}")
    prompt = RenderedPrompt(OCR_PROMPT, (image_ref,), "ocr")
    text = gateway.complete(prompt).raw_text.strip()
    if not text:
        log.warning("empty transcription for %s from %s", image_ref.path, gateway.config.backend_id)
    return OcrRecord(image_ref.sha256, text, gateway.config.backend_id, OCR_PROMPT_HASH)


def ocr_dataset(dataset: Dataset, gateway: Gateway, overwrite: bool = False, parallelism: int = 4) -> Dataset:
    """Transcribe every distinct image and fill in missing text.

    Results are merged by image hash, so completion order does not matter.
    """
    refs = {r.sha256: r for q in dataset.questions for r in q.image_refs}
    refs.update({r.sha256: r for a in dataset.answers for r in a.image_refs})
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        records = list(pool.map(lambda r: ocr_extract(r, gateway, dataset.root), refs.values()))
    return with_ocr(dataset, records, overwrite=overwrite)
