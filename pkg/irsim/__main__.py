from irsim import cli

if __name__ == '__main__':
    cli.irsim_init()
