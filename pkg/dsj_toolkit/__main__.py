from dsj_toolkit.cli import app

app(prog_name='dsj')
