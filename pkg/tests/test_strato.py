import json

import pytest

from strato import build_parser, main


def test_eigen_prints_both_spectra(capsys):
    assert main(['eigen', '--xi', '1,0.5,2', '--nuprime', '1.2', '--eps', '0.01',
                 '--r', '0.5', '--R', '4']) == 0
    out = json.loads(capsys.readouterr().out)
    assert out['xi'] == [1.0, 0.5, 2.0]
    assert len(out['analytic']) == len(out['numeric']) == 4
    assert out['analytic'][0] == pytest.approx([0.0, 0.0], abs=1e-9)
    for a, n in zip(out['analytic'], out['numeric']):
        assert a == pytest.approx(n, rel=1e-6, abs=1e-9)
    assert out['condition'] < 1e8


def test_eigen_truncation_exponents_and_slack(capsys):
    assert main(['eigen', '--xi', '1,0.5,2', '--nuprime', '1.2', '--eps', '0.01',
                 '--truncation', '0.1,0.2']) == 0
    out = json.loads(capsys.readouterr().out)
    assert out['truncation']['m'] == 0.1 and out['truncation']['M'] == 0.2
    assert out['truncation']['r'] == pytest.approx(0.01 ** 0.1)
    assert out['truncation']['R'] == pytest.approx(0.01 ** -0.2)
    assert set(out['bounds']) == {'D', 'dD_h', 'dD_3'}
    for entry in out['bounds'].values():
        assert entry['slack'] >= 0
        assert entry['slack'] == pytest.approx(entry['bound'] - entry['value'])
    assert out['bounds']['D']['value'] == pytest.approx(abs(out['remainder_D']), rel=1e-9)
    assert out['violations'] == 0


def test_eigen_outside_truncation_returns_one(capsys):
    # |xi| = 3 > eps^-0.2 ~ 2.51
    assert main(['eigen', '--xi', '1,0.5,2.8', '--nuprime', '1.2', '--eps', '0.01',
                 '--truncation', '0.1,0.2']) == 1


def test_eigen_rejects_malformed_lists():
    with pytest.raises(SystemExit):
        build_parser().parse_args(['eigen', '--xi', '1,0.5'])
    with pytest.raises(SystemExit):
        build_parser().parse_args(['eigen', '--xi', '1,a,2'])
    with pytest.raises(SystemExit):
        build_parser().parse_args(['eigen', '--xi', '1,0,0', '--truncation', '0.1'])
    with pytest.raises(SystemExit):
        build_parser().parse_args(['eigen', '--xi', '1,0,0', '--truncation', '0.1,0.2', '--r', '0.5'])
    args = build_parser().parse_args(['eigen', '--xi', '1,0.5,2', '--truncation', '0.1,0.2'])
    assert args.xi == (1.0, 0.5, 2.0) and args.truncation == (0.1, 0.2)


def test_eigen_rejects_bad_params(capsys):
    assert main(['eigen', '--xi', '1,0,0', '--nu', '-1']) == 1


@pytest.mark.slow
def test_verify_writes_meta(tmp_path, capsys):
    assert main(['verify', '--out', str(tmp_path)]) == 0
    meta = json.loads((tmp_path / 'meta.json').read_text())
    assert meta['count'] >= 25
    assert 'INVARIANT REPORT' in capsys.readouterr().out


def test_missing_config_returns_one(tmp_path):
    assert main(['simulate', '--config', str(tmp_path / 'absent.cfg')]) == 1


def test_set_without_equals_returns_one():
    assert main(['simulate', '--set', 'grid.n']) == 1


def test_simulate_small(tmp_path, capsys):
    code = main(['simulate', '--out', str(tmp_path), '--set', 'grid.n=8', '--set', 'run.t_end=0.02',
                 '--set', 'run.snapshot_every=1'])
    assert code == 0
    assert (tmp_path / 'full.csv').exists()
    assert 'simulation finished' in capsys.readouterr().out


@pytest.mark.slow
def test_dispersion_kernel_quick(tmp_path, capsys):
    assert main(['dispersion', '--study', 'kernel', '--quick', '--out', str(tmp_path)]) == 0
    meta = json.loads((tmp_path / 'meta.json').read_text())
    assert meta['study'] == 'kernel' and meta['quick']
    assert (tmp_path / 'series.csv').read_text().startswith('study,x,value')


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
