import pytest

from wavgen import write_wav


@pytest.fixture
def wav_file(tmp_path):
    return write_wav(tmp_path / "clip-one.wav")
